"""Config-file driven orchestration: generate, split, select, fuse, report.

A run config is one JSON object describing the synthetic task, the training
hyperparameters, the main model, the candidate ladder, and the seeds. The
functions here wire the library modules together so the CLI and the
acceptance suite execute identical paths.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bias_features import FeatureConfig
from .corpus import Dataset, JsonlSchema, dataset_hash, save_jsonl
from .errors import ValidationError
from .models import Arch, InputMode, ModelSpec, OptimizerKind, TrainConfig
from .report import make_result_table, render_table, selection_table, write_manifest
from .selection import (FusionReport, FusionSource, SelectionConfig,
                        SelectionReport, fuse_best, select_bias_model)
from .splits import family_split
from .synth import BiasKind, SynthBundle, SynthConfig, config_hash, generate, \
    planted_feature_families

__all__ = [
    "RunConfig",
    "load_run_config",
    "run_config_from_dict",
    "synth_schema",
    "run_generate",
    "run_selection",
    "run_fusion",
    "SelectionOutcome",
    "FusionOutcome",
]


@dataclass(frozen=True)
class RunConfig:
    name: str
    synth: SynthConfig
    train: TrainConfig
    main_spec: ModelSpec
    candidates: tuple[ModelSpec, ...]
    seeds: tuple[int, ...]
    fusion_weight: float = 1.0
    guardrail_margin: Optional[float] = None
    fusion_gated: bool = False
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()
        ).hexdigest()[:16]

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(main_spec=self.main_spec, train=self.train,
                               fusion_weight=self.fusion_weight,
                               guardrail_margin=self.guardrail_margin,
                               config_hash=self.config_hash)


def _parse_synth(obj: dict) -> SynthConfig:
    try:
        return SynthConfig(
            num_classes=obj["num_classes"],
            train_size=obj["train_size"],
            dev_size=obj["dev_size"],
            test_size=obj["test_size"],
            vocab_size=obj["vocab_size"],
            seq_len=obj["seq_len"],
            bias_kind=BiasKind(obj["bias_kind"]),
            bias_strength=obj["bias_strength"],
            seed=obj["seed"],
            signal_variants=obj.get("signal_variants", 8),
            seq_len_b=obj.get("seq_len_b"),
        )
    except KeyError as exc:
        raise ValidationError(f"synth config missing field {exc.args[0]!r}")


def _parse_train(obj: dict) -> TrainConfig:
    return TrainConfig(
        epochs=obj.get("epochs", 10),
        batch_size=obj.get("batch_size", 64),
        learning_rate=obj.get("learning_rate", 1e-2),
        optimizer=OptimizerKind(obj.get("optimizer", "adam")),
        seed=obj.get("seed", 0),
    )


def _parse_model(obj: dict, num_classes: int) -> ModelSpec:
    try:
        arch = Arch(obj["arch"])
    except KeyError:
        raise ValidationError("model spec missing field 'arch'")
    if arch is Arch.FEATURE_LOGREG:
        feats = obj.get("features", {})
        fc = FeatureConfig(
            include=tuple(feats.get("include", [])) if "include" in feats
            else FeatureConfig().include,
            token_indicators=tuple(feats.get("token_indicators", [])),
            subseq_mode=feats.get("subseq_mode", "contiguous"),
        )
        return ModelSpec(arch=arch, input_mode=InputMode.FEATURES,
                         num_classes=num_classes, feature_config=fc,
                         name=obj.get("name", ""))
    return ModelSpec(
        arch=arch,
        input_mode=InputMode(obj.get("input_mode", "pair")),
        num_classes=num_classes,
        hidden_dims=tuple(obj.get("hidden_dims", [])),
        embed_dim=obj.get("embed_dim", 16),
        name=obj.get("name", ""),
    )


def run_config_from_dict(obj: dict) -> RunConfig:
    for key in ("synth", "train", "main_model", "candidates", "seeds"):
        if key not in obj:
            raise ValidationError(f"run config missing field {key!r}")
    synth = _parse_synth(obj["synth"])
    sel = obj.get("selection", {})
    seeds = tuple(obj["seeds"])
    if len(seeds) != len(set(seeds)):
        raise ValidationError("seeds must be distinct")
    return RunConfig(
        name=obj.get("name", "run"),
        synth=synth,
        train=_parse_train(obj["train"]),
        main_spec=_parse_model(obj["main_model"], synth.num_classes),
        candidates=tuple(_parse_model(c, synth.num_classes) for c in obj["candidates"]),
        seeds=seeds,
        fusion_weight=sel.get("fusion_weight", 1.0),
        guardrail_margin=sel.get("guardrail_margin"),
        fusion_gated=obj.get("fusion", {}).get("gated", False),
        raw=obj,
    )


def load_run_config(path: str | Path) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: malformed JSON ({exc.msg})")
    return run_config_from_dict(obj)


def synth_schema(config: SynthConfig) -> JsonlSchema:
    """The JSONL field mapping every generated dataset is written with."""
    return JsonlSchema(text_a="premise", text_b="hypothesis", label="label",
                       label_names=config.label_names, id="id")


def run_generate(rc: RunConfig, out_dir: str | Path) -> dict:
    """Generate the synthetic task and write JSONL files plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = generate(rc.synth)
    schema = synth_schema(rc.synth)
    hashes = {}
    for name in ("train", "dev_pool", "dev_easy", "dev_challenge", "test_challenge"):
        data: Dataset = getattr(bundle, name)
        save_jsonl(data, out / f"{name}.jsonl", schema)
        hashes[name] = dataset_hash(data)
    manifest = write_manifest(
        config=rc.raw, outputs={"sizes": {n: len(getattr(bundle, n)) for n in hashes}},
        hashes=hashes, path=out / "manifest.json", seeds=[rc.synth.seed],
    )
    return manifest


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectionOutcome:
    bundle: SynthBundle
    reports: dict[str, SelectionReport]        # family name -> report
    bias_trains: dict[str, Dataset]
    dataset_hashes: dict[str, str]


def _family_bias_trains(rc: RunConfig, bundle: SynthBundle) -> dict[str, Dataset]:
    families = planted_feature_families(rc.synth)
    return {
        fam: family_split(bundle.train, specs, name=fam).bias_set
        for fam, specs in families.items()
    }


def run_selection(rc: RunConfig) -> SelectionOutcome:
    """Capacity search per bias family on dev-derived easy/challenge sets."""
    bundle = generate(rc.synth)
    bias_trains = _family_bias_trains(rc, bundle)
    cfg = rc.selection_config()
    reports = {}
    for fam, bias_train in bias_trains.items():
        reports[fam] = select_bias_model(
            list(rc.candidates), bias_train, bundle.train,
            bundle.dev_easy, bundle.dev_challenge, cfg, list(rc.seeds),
        )
    hashes = {
        "train": dataset_hash(bundle.train),
        "dev_easy": dataset_hash(bundle.dev_easy),
        "dev_challenge": dataset_hash(bundle.dev_challenge),
        "test_challenge": dataset_hash(bundle.test_challenge),
    }
    return SelectionOutcome(bundle=bundle, reports=reports,
                            bias_trains=bias_trains, dataset_hashes=hashes)


def write_selection_artifacts(rc: RunConfig, outcome: SelectionOutcome,
                              out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {}
    results = {}
    for fam, report in outcome.reports.items():
        report.save(out / f"selection_{fam}.json")
        text = render_table(selection_table(
            report, dev_name="dev_easy", challenge_name="dev_challenge",
            title=f"{rc.name}: {fam} (winner: {report.winner})"))
        (out / f"selection_{fam}.txt").write_text(text, encoding="utf-8")
        tables[fam] = str(out / f"selection_{fam}.txt")
        results[fam] = report.to_json()
    return write_manifest(config=rc.raw, outputs=results,
                          hashes=outcome.dataset_hashes,
                          path=out / "manifest.json", seeds=rc.seeds,
                          tables=tables)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionOutcome:
    selection: SelectionOutcome
    winners: dict[str, ModelSpec]
    fused: FusionReport
    singles: dict[str, FusionReport]
    eval_sets: dict[str, Dataset]


def _winner_spec(rc: RunConfig, report: SelectionReport) -> ModelSpec:
    for cand in rc.candidates:
        if cand.name == report.winner:
            return cand
    raise ValidationError(
        f"selection winner {report.winner!r} is the baseline; nothing to fuse"
    )


def _family_gate_spec(fam: str, specs) -> "BiasFeatureSpec":
    """A gate that fires when any of the family's patterns is present."""
    from .bias_features import BiasFeatureSpec, FeatureKind

    if len(specs) == 1:
        return specs[0]
    rules = [s.planted_token_rule for s in specs]
    if any(r is None for r in rules):
        raise ValidationError(f"family {fam!r} cannot be gated: non-planted specs")

    def rule(tokens_a, tokens_b) -> bool:
        return any(r(tokens_a, tokens_b) for r in rules)

    return BiasFeatureSpec(FeatureKind.PLANTED, specs[0].bias_target_label,
                           planted_token_rule=rule, name=f"{fam}[any]")


def run_fusion(rc: RunConfig) -> FusionOutcome:
    """Select a winner per family, then fuse all winners into one main model.

    Evaluated on the easy dev split, the full challenge set, and each
    family's slice of it; single-source runs are reported for comparison.
    """
    outcome = run_selection(rc)
    bundle = outcome.bundle
    families = planted_feature_families(rc.synth)
    cfg = rc.selection_config()

    eval_sets: dict[str, Dataset] = {
        "dev_easy": bundle.dev_easy,
        "challenge_union": bundle.test_challenge,
    }
    if len(families) > 1:
        for fam, specs in families.items():
            eval_sets[f"challenge_{fam}"] = family_split(
                bundle.test_challenge, specs, name=fam).challenge_set

    winners = {}
    sources = []
    singles = {}
    for fam, report in outcome.reports.items():
        spec = _winner_spec(rc, report)
        winners[fam] = spec
        gate = _family_gate_spec(fam, families[fam]) if rc.fusion_gated else None
        sources.append(FusionSource(model=spec, feature=gate,
                                    bias_train=outcome.bias_trains[fam],
                                    weight=rc.fusion_weight, gated=rc.fusion_gated))
    fused = fuse_best(sources, bundle.train, eval_sets, cfg, list(rc.seeds))
    for fam, src in zip(outcome.reports, sources):
        singles[fam] = fuse_best([src], bundle.train, eval_sets, cfg, list(rc.seeds))
    return FusionOutcome(selection=outcome, winners=winners, fused=fused,
                         singles=singles, eval_sets=eval_sets)


def write_fusion_artifacts(rc: RunConfig, outcome: FusionOutcome,
                           out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    headers = list(outcome.fused.accuracies)
    rows = []
    for fam, rep in outcome.singles.items():
        rows.append((f"poe[{fam}]", [rep.mean_std(h) for h in headers]))
    rows.append(("poe[fused]", [outcome.fused.mean_std(h) for h in headers]))
    table = make_result_table(f"{rc.name}: multi-bias fusion", headers, rows)
    (out / "fusion.txt").write_text(render_table(table), encoding="utf-8")
    results = {
        "fused": outcome.fused.to_json(),
        "singles": {fam: rep.to_json() for fam, rep in outcome.singles.items()},
        "winners": {fam: spec.name for fam, spec in outcome.winners.items()},
        "selection": {fam: rep.to_json() for fam, rep in outcome.selection.reports.items()},
    }
    return write_manifest(config=rc.raw, outputs=results,
                          hashes=outcome.selection.dataset_hashes,
                          path=out / "manifest.json", seeds=rc.seeds,
                          tables={"fusion": str(out / "fusion.txt")})
