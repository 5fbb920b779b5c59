"""Capacity search: train every candidate bias model, ensemble, evaluate, pick.

For each candidate on the ladder and each seed, a bias model is trained on
the bias training set, frozen, and fused into a fresh main model trained
under product-of-experts. The winner is the candidate whose main model has
the highest mean challenge accuracy; dev accuracy and parameter count break
ties. A "none" baseline row (plain cross-entropy, no bias model) is always
recorded for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .bias_features import BiasFeatureSpec
from .corpus import Dataset, Vocab, build_vocab
from .ensemble import context_from_models
from .errors import DebiasError, ValidationError
from .models import (LossAdapter, Model, ModelSpec, TrainConfig,
                     encode_dataset, forward_batch, train)

__all__ = [
    "NONE_ROW",
    "CandidateRow",
    "SelectionReport",
    "SelectionConfig",
    "FusionSource",
    "FusionReport",
    "evaluate",
    "aggregate_runs",
    "select_bias_model",
    "fuse_best",
]

NONE_ROW = "none"


def evaluate(model: Model, data: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the smaller label."""
    if len(data) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    if model.spec.num_classes != data.num_classes:
        raise ValidationError(
            f"model has {model.spec.num_classes} classes, data has {data.num_classes}"
        )
    enc = encode_dataset(data, model.spec, model.vocab)
    preds = np.argmax(forward_batch(model, enc), axis=1)
    return float(np.mean(preds == enc.labels))


def aggregate_runs(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 denominator) over runs."""
    if len(values) < 2:
        raise ValidationError("need at least 2 runs to aggregate")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1))


@dataclass(frozen=True)
class CandidateRow:
    name: str
    dev_accs: tuple[float, ...]
    challenge_accs: tuple[float, ...]
    bias_accs: tuple[float, ...]
    param_count: int

    @property
    def dev(self) -> tuple[float, float]:
        return aggregate_runs(self.dev_accs)

    @property
    def challenge(self) -> tuple[float, float]:
        return aggregate_runs(self.challenge_accs)

    @property
    def bias_acc(self) -> tuple[float, float]:
        return aggregate_runs(self.bias_accs) if self.bias_accs else (float("nan"), float("nan"))


@dataclass(frozen=True)
class SelectionReport:
    rows: tuple[CandidateRow, ...]
    winner: str
    seeds: tuple[int, ...]
    config_hash: str = ""

    def row(self, name: str) -> CandidateRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise ValidationError(f"no row named {name!r}")

    def to_json(self) -> dict:
        return {
            "winner": self.winner,
            "seeds": list(self.seeds),
            "config_hash": self.config_hash,
            "rows": [
                {
                    "name": r.name,
                    "dev_accs": list(r.dev_accs),
                    "challenge_accs": list(r.challenge_accs),
                    "bias_accs": list(r.bias_accs),
                    "param_count": r.param_count,
                }
                for r in self.rows
            ],
        }

    @staticmethod
    def from_json(obj: dict) -> "SelectionReport":
        rows = tuple(
            CandidateRow(
                name=r["name"],
                dev_accs=tuple(r["dev_accs"]),
                challenge_accs=tuple(r["challenge_accs"]),
                bias_accs=tuple(r["bias_accs"]),
                param_count=r["param_count"],
            )
            for r in obj["rows"]
        )
        return SelectionReport(rows=rows, winner=obj["winner"],
                               seeds=tuple(obj["seeds"]),
                               config_hash=obj.get("config_hash", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "SelectionReport":
        return SelectionReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class SelectionConfig:
    """Everything select_bias_model needs besides data and candidates.

    One shared TrainConfig covers bias and main training (the loss adapter is
    overridden per role). The guardrail, when set, rejects winners whose mean
    dev accuracy falls more than the margin below the no-bias baseline.
    """

    main_spec: ModelSpec
    train: TrainConfig
    fusion_weight: float = 1.0
    guardrail_margin: Optional[float] = None
    clip_eps: float = 1e-7
    config_hash: str = ""


def _seeded(spec: ModelSpec, seed: int) -> ModelSpec:
    return replace(spec, init_seed=seed)


def _train_cfg(cfg: TrainConfig, seed: int, adapter: LossAdapter) -> TrainConfig:
    return replace(cfg, seed=seed, loss_adapter=adapter)


def train_candidate_pair(candidate: ModelSpec, bias_train: Dataset,
                         main_train: Dataset, cfg: SelectionConfig, seed: int,
                         vocab: Vocab) -> tuple[Model, Model]:
    """One selection cell: (trained bias model, POE-trained main model)."""
    bias_model = train(_seeded(candidate, seed), bias_train,
                       _train_cfg(cfg.train, seed, LossAdapter.PLAIN_CE), vocab=vocab)
    ctx = context_from_models([bias_model], main_train,
                              weights=[cfg.fusion_weight], clip_eps=cfg.clip_eps)
    main_model = train(_seeded(cfg.main_spec, seed), main_train,
                       _train_cfg(cfg.train, seed, LossAdapter.POE), ctx, vocab=vocab)
    return bias_model, main_model


def select_bias_model(candidates: Sequence[ModelSpec], bias_train: Dataset,
                      main_train: Dataset, dev: Dataset, challenge: Dataset,
                      cfg: SelectionConfig, seeds: Sequence[int]) -> SelectionReport:
    """Run the full candidate x seed grid and pick the most robust bias model.

    The winner maximizes mean challenge accuracy; exact ties fall back to
    higher mean dev accuracy, then smaller parameter count, then candidate
    order. The baseline row wins only if its challenge mean strictly exceeds
    every candidate's.
    """
    if len(candidates) < 2:
        raise ValidationError("selection needs at least 2 candidates")
    if len(seeds) < 2:
        raise ValidationError("selection needs at least 2 seeds")
    names = [c.name for c in candidates]
    if len(set(names)) != len(names) or NONE_ROW in names:
        raise ValidationError("candidate names must be unique and not 'none'")
    vocab = build_vocab(main_train)

    rows: list[CandidateRow] = []
    base_dev, base_chal = [], []
    baseline_params = 0
    for seed in seeds:
        baseline = train(_seeded(cfg.main_spec, seed), main_train,
                         _train_cfg(cfg.train, seed, LossAdapter.PLAIN_CE), vocab=vocab)
        baseline_params = baseline.param_count
        base_dev.append(evaluate(baseline, dev))
        base_chal.append(evaluate(baseline, challenge))
    rows.append(CandidateRow(NONE_ROW, tuple(base_dev), tuple(base_chal), (),
                             baseline_params))

    for candidate in candidates:
        dev_accs, chal_accs, bias_accs = [], [], []
        params = 0
        for seed in seeds:
            try:
                bias_model, main_model = train_candidate_pair(
                    candidate, bias_train, main_train, cfg, seed, vocab)
            except DebiasError as exc:
                raise type(exc)(f"candidate {candidate.name!r}: {exc}") from exc
            params = bias_model.param_count
            bias_accs.append(evaluate(bias_model, bias_train))
            dev_accs.append(evaluate(main_model, dev))
            chal_accs.append(evaluate(main_model, challenge))
        rows.append(CandidateRow(candidate.name, tuple(dev_accs), tuple(chal_accs),
                                 tuple(bias_accs), params))

    none_row = rows[0]
    eligible = list(rows[1:])
    if cfg.guardrail_margin is not None:
        floor = none_row.dev[0] - cfg.guardrail_margin
        eligible = [r for r in eligible if r.dev[0] >= floor]
    if eligible:
        best = max(eligible, key=lambda r: (r.challenge[0], r.dev[0], -r.param_count))
        winner = best.name
        if none_row.challenge[0] > best.challenge[0]:
            winner = NONE_ROW
    else:
        winner = NONE_ROW
    return SelectionReport(rows=tuple(rows), winner=winner, seeds=tuple(seeds),
                           config_hash=cfg.config_hash)


# ---------------------------------------------------------------------------
# Multi-bias fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionSource:
    """One frozen bias source for fuse_best.

    `model` may be a trained Model (frozen across seeds) or a ModelSpec paired
    with bias_train, in which case the bias model is retrained per seed exactly
    as selection did, reproducing the winning configuration bit for bit.
    """

    model: Union[Model, ModelSpec]
    feature: Optional[BiasFeatureSpec] = None
    bias_train: Optional[Dataset] = None
    weight: float = 1.0
    gated: bool = False

    def __post_init__(self):
        if isinstance(self.model, ModelSpec) and self.bias_train is None:
            raise ValidationError("a spec-valued fusion source needs bias_train")
        if self.gated and self.feature is None:
            raise ValidationError("a gated fusion source needs its feature spec")


@dataclass(frozen=True)
class FusionReport:
    accuracies: dict[str, tuple[float, ...]]  # eval set name -> per-seed accs
    seeds: tuple[int, ...]
    source_names: tuple[str, ...]
    config_hash: str = ""

    def mean_std(self, name: str) -> tuple[float, float]:
        return aggregate_runs(self.accuracies[name])

    def to_json(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "sources": list(self.source_names),
            "config_hash": self.config_hash,
            "accuracies": {k: list(v) for k, v in self.accuracies.items()},
        }


def fuse_best(per_feature_winners: Sequence[FusionSource], main_train: Dataset,
              eval_sets: dict[str, Dataset], cfg: SelectionConfig,
              seeds: Sequence[int]) -> FusionReport:
    """Train one main model under multi-source POE and score every eval set.

    All winners must share the label space; gated sources contribute a uniform
    (exactly zero after centering) adjustment on examples without their feature.
    """
    if not per_feature_winners:
        raise ValidationError("fuse_best needs at least one source")
    if len(seeds) < 2:
        raise ValidationError("fuse_best needs at least 2 seeds")
    c = main_train.num_classes
    for src in per_feature_winners:
        spec = src.model.spec if isinstance(src.model, Model) else src.model
        if spec.num_classes != c:
            raise ValidationError(
                f"fusion source {spec.name!r} label space differs from main_train"
            )
    vocab = build_vocab(main_train)
    accs: dict[str, list[float]] = {name: [] for name in eval_sets}
    for seed in seeds:
        bias_models = []
        for src in per_feature_winners:
            if isinstance(src.model, Model):
                bias_models.append(src.model)
            else:
                bias_models.append(
                    train(_seeded(src.model, seed), src.bias_train,
                          _train_cfg(cfg.train, seed, LossAdapter.PLAIN_CE), vocab=vocab)
                )
        ctx = context_from_models(
            bias_models, main_train,
            weights=[s.weight for s in per_feature_winners],
            gates=[s.feature if s.gated else None for s in per_feature_winners],
            clip_eps=cfg.clip_eps,
        )
        main_model = train(_seeded(cfg.main_spec, seed), main_train,
                           _train_cfg(cfg.train, seed, LossAdapter.POE), ctx, vocab=vocab)
        for name, data in eval_sets.items():
            accs[name].append(evaluate(main_model, data))
    source_names = tuple(
        (s.model.spec.name if isinstance(s.model, Model) else s.model.name)
        for s in per_feature_winners
    )
    return FusionReport(accuracies={k: tuple(v) for k, v in accs.items()},
                        seeds=tuple(seeds), source_names=source_names,
                        config_hash=cfg.config_hash)
