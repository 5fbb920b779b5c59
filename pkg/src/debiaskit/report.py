"""Result tables with mean±std percent formatting, and run manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import ValidationError

__all__ = [
    "ResultTable",
    "make_result_table",
    "format_cell",
    "render_table",
    "write_manifest",
    "read_manifest",
    "validate_manifest",
    "selection_table",
]

MANIFEST_SCHEMA_VERSION = 1
_MANIFEST_REQUIRED = ("schema_version", "config", "seeds", "dataset_hashes", "results")


@dataclass(frozen=True)
class ResultTable:
    """Rectangular table of (mean, std) cells with per-column max-mean bolding."""

    title: str
    headers: tuple[str, ...]
    rows: tuple[tuple[str, tuple[tuple[float, float], ...]], ...]
    bold: tuple[tuple[bool, ...], ...]


def make_result_table(title: str, headers: Sequence[str],
                      rows: Sequence[tuple[str, Sequence[tuple[float, float]]]]
                      ) -> ResultTable:
    """Build a table, computing the bold mask; ties bold the first row."""
    if not rows:
        raise ValidationError("a result table needs at least one row")
    ncols = len(headers)
    for name, cells in rows:
        if len(cells) != ncols:
            raise ValidationError(
                f"row {name!r} has {len(cells)} cells, expected {ncols}"
            )
    best = [max(range(len(rows)), key=lambda i: (rows[i][1][j][0], -i))
            for j in range(ncols)]
    bold = tuple(
        tuple(best[j] == i for j in range(ncols)) for i in range(len(rows))
    )
    frozen = tuple((name, tuple((float(m), float(s)) for m, s in cells))
                   for name, cells in rows)
    return ResultTable(title=title, headers=tuple(headers), rows=frozen, bold=bold)


def format_cell(mean: float, std: float) -> str:
    """Percent with two decimals: (0.8982, 0.0089) -> '89.82 ±0.89'."""
    return f"{100.0 * mean:.2f} ±{100.0 * std:.2f}"


def render_table(table: ResultTable) -> str:
    """Fixed-width text rendering; per-column max means are starred."""
    cells = [[format_cell(m, s) for (m, s) in row] for _, row in table.rows]
    marked = [
        [f"*{c}*" if table.bold[i][j] else c for j, c in enumerate(row)]
        for i, row in enumerate(cells)
    ]
    name_w = max([len(name) for name, _ in table.rows] + [len("model")])
    col_ws = [
        max([len(marked[i][j]) for i in range(len(marked))] + [len(table.headers[j])])
        for j in range(len(table.headers))
    ]
    lines = []
    if table.title:
        lines.append(table.title)
    header = "  ".join(["model".ljust(name_w)] +
                       [h.rjust(col_ws[j]) for j, h in enumerate(table.headers)])
    lines.append(header)
    lines.append("-" * len(header))
    for i, (name, _) in enumerate(table.rows):
        lines.append("  ".join([name.ljust(name_w)] +
                               [marked[i][j].rjust(col_ws[j])
                                for j in range(len(table.headers))]))
    return "\n".join(lines) + "\n"


def selection_table(report, dev_name: str = "dev", challenge_name: str = "challenge",
                    title: str = "") -> ResultTable:
    """Shape a SelectionReport like the bias-model comparison tables:
    one row per bias model (baseline first), dev and challenge columns."""
    rows = []
    for r in report.rows:
        rows.append((r.name, [r.dev, r.challenge]))
    return make_result_table(title or f"bias model selection (winner: {report.winner})",
                             [dev_name, challenge_name], rows)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def write_manifest(config: dict, outputs: dict, hashes: dict[str, str],
                   path: str | Path, seeds: Sequence[int] = (),
                   checkpoints: Optional[dict[str, str]] = None,
                   tables: Optional[dict[str, str]] = None) -> dict:
    """Persist everything needed to re-run bit-identically: the full run
    config, seeds, dataset hashes, and where artifacts were written."""
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "config": config,
        "seeds": list(seeds),
        "dataset_hashes": dict(hashes),
        "checkpoints": dict(checkpoints or {}),
        "tables": dict(tables or {}),
        "results": outputs,
    }
    validate_manifest(manifest)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True),
                          encoding="utf-8")
    return manifest


def read_manifest(path: str | Path) -> dict:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: dict, expected_datasets: Sequence[str] = ()) -> None:
    for key in _MANIFEST_REQUIRED:
        if key not in manifest:
            raise ValidationError(f"manifest missing required key {key!r}")
    if manifest["schema_version"] != MANIFEST_SCHEMA_VERSION:
        raise ValidationError(
            f"manifest schema_version {manifest['schema_version']} "
            f"!= {MANIFEST_SCHEMA_VERSION}"
        )
    for name in expected_datasets:
        if name not in manifest["dataset_hashes"]:
            raise ValidationError(f"manifest missing dataset hash for {name!r}")
