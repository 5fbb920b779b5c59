"""Bias training sets, challenge sets, and easy/challenge dev splits.

A feature split sorts examples by whether a bias predicate fires and whether
the label follows the bias: feature-positive examples whose label matches the
bias target form the bias (easy) set, feature-positive examples whose label
breaks the pattern form the challenge set. Model-based splits do the same
using a single-side probe's correctness instead of a predicate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bias_features import BiasFeatureSpec, FeatureConfig, FeatureKind, feature_holds
from .corpus import Dataset, JsonlSchema, save_jsonl
from .errors import ValidationError

logger = logging.getLogger(__name__)

__all__ = [
    "SplitResult",
    "feature_split",
    "family_split",
    "model_based_split",
    "dev_easy_challenge",
    "write_split",
]


@dataclass(frozen=True)
class SplitResult:
    bias_set: Dataset
    easy_set: Dataset
    challenge_set: Dataset
    stats: dict

    def validate_partition(self, feature_positive_ids: set[str]) -> None:
        """Easy and challenge must be disjoint and cover exactly the given ids."""
        easy = {ex.id for ex in self.easy_set}
        hard = {ex.id for ex in self.challenge_set}
        if easy & hard:
            raise ValidationError(f"easy/challenge overlap: {sorted(easy & hard)[:5]}")
        if easy | hard != feature_positive_ids:
            raise ValidationError("easy ∪ challenge does not match the expected id set")


def feature_split(dataset: Dataset, spec: BiasFeatureSpec,
                  config: Optional[FeatureConfig] = None) -> SplitResult:
    """Partition feature-positive examples by whether the label follows the bias."""
    if not spec.is_predicate:
        raise ValidationError(
            f"feature_split needs a predicate feature, got {spec.kind.value}"
        )
    if spec.bias_target_label >= dataset.num_classes:
        raise ValidationError(
            f"bias target {spec.bias_target_label} outside label space "
            f"of size {dataset.num_classes}"
        )
    bias, challenge = [], []
    for ex in dataset:
        if feature_holds(spec, ex, config):
            (bias if ex.label == spec.bias_target_label else challenge).append(ex)
    if not bias:
        raise ValidationError(
            f"feature {spec.name!r} never co-occurs with target label "
            f"{spec.bias_target_label}"
        )
    positive = len(bias) + len(challenge)
    stats = {
        "feature": spec.name,
        "bias_target_label": spec.bias_target_label,
        "total": len(dataset),
        "feature_positive": positive,
        "bias": len(bias),
        "challenge": len(challenge),
        "correlation": len(bias) / positive,
    }
    prov = f"{dataset.provenance}|feature_split:{spec.name}"
    return SplitResult(
        bias_set=dataset.subset(bias, prov + ":bias"),
        easy_set=dataset.subset(bias, prov + ":easy"),
        challenge_set=dataset.subset(challenge, prov + ":challenge"),
        stats=stats,
    )


def family_split(dataset: Dataset, specs: Sequence[BiasFeatureSpec],
                 config: Optional[FeatureConfig] = None,
                 name: str = "family") -> SplitResult:
    """Feature splits merged over one bias family (one spec per class).

    The family bias set contains every example where some family pattern
    fires, whatever its label: bias models train on all examples that have
    the feature, so their confidence stays calibrated to the actual
    pattern-label correlation instead of saturating at one. The challenge
    set contains the feature-positive examples where no firing pattern
    agrees with the label; pattern-free examples carry no signal for this
    family and land in the easy set next to the pattern-consistent ones.
    """
    if not specs:
        raise ValidationError("family_split needs at least one spec")
    bias, challenge, easy = [], [], []
    for ex in dataset:
        firing = [s for s in specs if feature_holds(s, ex, config)]
        if not firing:
            easy.append(ex)
            continue
        bias.append(ex)
        if any(s.bias_target_label == ex.label for s in firing):
            easy.append(ex)
        else:
            challenge.append(ex)
    if not bias or len(challenge) == len(bias):
        raise ValidationError(
            f"feature {name!r} never co-occurs with target label"
        )
    stats = {
        "feature": name,
        "total": len(dataset),
        "feature_positive": len(bias),
        "bias": len(bias),
        "challenge": len(challenge),
        "correlation": (len(bias) - len(challenge)) / len(bias),
    }
    prov = f"{dataset.provenance}|family_split:{name}"
    return SplitResult(
        bias_set=dataset.subset(bias, prov + ":bias"),
        easy_set=dataset.subset(easy, prov + ":easy"),
        challenge_set=dataset.subset(challenge, prov + ":challenge"),
        stats=stats,
    )


def _probe_correct_mask(probe, dataset: Dataset) -> np.ndarray:
    from .models import encode_dataset, forward_batch

    enc = encode_dataset(dataset, probe.spec, probe.vocab)
    preds = np.argmax(forward_batch(probe, enc), axis=1)
    return preds == enc.labels


def model_based_split(dataset: Dataset, probe_model, side,
                      bias_source: Optional[Dataset] = None) -> SplitResult:
    """Split by whether a single-side probe predicts each example correctly.

    The probe must be a model trained on the requested side alone. bias_source
    (defaulting to the dataset itself) is where the bias training examples are
    drawn from, e.g. the task training split while easy/challenge come from dev.
    """
    from .models import InputMode

    side = InputMode(side) if not isinstance(side, InputMode) else side
    if side not in (InputMode.A_ONLY, InputMode.B_ONLY):
        raise ValidationError(f"side must be A_ONLY or B_ONLY, got {side}")
    if probe_model.spec.input_mode is not side:
        raise ValidationError(
            f"probe reads {probe_model.spec.input_mode.value}, split asked for {side.value}"
        )
    if probe_model.spec.num_classes != dataset.num_classes:
        raise ValidationError(
            f"probe has {probe_model.spec.num_classes} classes, "
            f"dataset has {dataset.num_classes}"
        )
    source = bias_source if bias_source is not None else dataset
    if source.num_classes != dataset.num_classes:
        raise ValidationError("bias_source label space differs from dataset")
    eval_mask = _probe_correct_mask(probe_model, dataset)
    src_mask = eval_mask if source is dataset else _probe_correct_mask(probe_model, source)
    bias = [ex for ex, ok in zip(source, src_mask) if ok]
    easy = [ex for ex, ok in zip(dataset, eval_mask) if ok]
    challenge = [ex for ex, ok in zip(dataset, eval_mask) if not ok]
    if not challenge:
        logger.warning(
            "probe predicts every example correctly; challenge set is empty"
        )
    stats = {
        "side": side.value,
        "probe_accuracy_eval": float(eval_mask.mean()) if len(dataset) else 0.0,
        "bias": len(bias),
        "easy": len(easy),
        "challenge": len(challenge),
    }
    prov = f"{dataset.provenance}|model_split:{side.value}"
    return SplitResult(
        bias_set=source.subset(bias, prov + ":bias"),
        easy_set=dataset.subset(easy, prov + ":easy"),
        challenge_set=dataset.subset(challenge, prov + ":challenge"),
        stats=stats,
    )


def dev_easy_challenge(dev: Dataset, spec: BiasFeatureSpec, probe=None,
                       config: Optional[FeatureConfig] = None
                       ) -> tuple[Dataset, Dataset]:
    """Split a dev set into easy and challenge subsets for one bias feature.

    Feature-negative examples carry no bias signal and belong to easy; only
    feature-positive examples with a pattern-breaking label are challenges.
    """
    from .models import InputMode

    if spec.kind in (FeatureKind.SINGLE_INPUT_A, FeatureKind.SINGLE_INPUT_B):
        if probe is None:
            raise ValidationError(f"{spec.kind.value} needs a probe model")
        side = (InputMode.A_ONLY if spec.kind is FeatureKind.SINGLE_INPUT_A
                else InputMode.B_ONLY)
        result = model_based_split(dev, probe, side)
        return result.easy_set, result.challenge_set
    result = feature_split(dev, spec, config)
    challenge_ids = {ex.id for ex in result.challenge_set}
    easy = [ex for ex in dev if ex.id not in challenge_ids]
    prov = f"{dev.provenance}|dev_split:{spec.name}"
    return dev.subset(easy, prov + ":easy"), result.challenge_set


def write_split(result: SplitResult, out_dir: str | Path, schema: JsonlSchema,
                config_hash: str = "") -> None:
    """Write the three datasets as JSONL plus a stats sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_jsonl(result.bias_set, out / "bias.jsonl", schema)
    save_jsonl(result.easy_set, out / "easy.jsonl", schema)
    save_jsonl(result.challenge_set, out / "challenge.jsonl", schema)
    sidecar = dict(result.stats)
    if config_hash:
        sidecar["config_hash"] = config_hash
    (out / "stats.json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
