"""Debiasing ensemble losses: product-of-experts, reweighting, self-distillation.

A frozen bias model's probabilities enter the main model's loss in one of
three ways: added in log space before the softmax (PoE), as per-example loss
weights (reweight), or by rescaling a teacher's soft targets (distillation).
Multiple bias sources fuse as a weighted sum of log probabilities, each
optionally gated by a feature predicate so it fires only on examples that
carry its pattern.

Log-bias adjustments are max-centered per example. Softmax shift invariance
makes this a mathematical no-op, but it guarantees that a uniform bias source
contributes an exactly-zero adjustment, so PoE training with uniform sources
is bit-identical to plain cross-entropy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bias_features import BiasFeatureSpec, FeatureConfig, feature_holds
from .corpus import Dataset, Example
from .errors import ValidationError

__all__ = [
    "DEFAULT_CLIP_EPS",
    "BiasSource",
    "EnsembleContext",
    "poe_fuse",
    "poe_loss_and_grad",
    "reweight_weight",
    "self_distill_targets",
    "conditional_bias_vector",
    "context_from_models",
    "distill_context",
    "loss_and_dlogits",
    "write_prob_cache",
    "read_prob_cache",
]

DEFAULT_CLIP_EPS = 1e-7


def _validate_prob_rows(probs: np.ndarray, what: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValidationError(f"{what}: expected (N, C) probabilities")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise ValidationError(f"{what}: probabilities must be finite and >= 0")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValidationError(f"{what}: rows must sum to 1 (max dev {np.max(np.abs(sums - 1)):.2e})")
    return probs


def _centered_log(probs: np.ndarray, eps: float, temperature: float) -> np.ndarray:
    """Clip to [eps, 1], renormalize, take logs, subtract the per-row max.

    Max-centering (rather than mean-centering) maps a uniform row to an
    exactly-zero adjustment, which the plain-CE equivalence relies on.
    """
    b = probs
    if temperature != 1.0:
        b = b ** (1.0 / temperature)
        b = b / b.sum(axis=1, keepdims=True)
    b = np.clip(b, eps, 1.0)
    b = b / b.sum(axis=1, keepdims=True)
    logb = np.log(b)
    return logb - logb.max(axis=1, keepdims=True)


@dataclass
class BiasSource:
    """One frozen bias model's predictions over a fixed dataset order."""

    name: str
    probs: np.ndarray
    weight: float = 1.0
    gate_mask: Optional[np.ndarray] = None  # True where the source's feature holds
    temperature: float = 1.0

    def __post_init__(self):
        self.probs = _validate_prob_rows(self.probs, f"bias source {self.name!r}")
        if self.weight < 0:
            raise ValidationError(f"bias source {self.name!r}: weight must be >= 0")
        if self.temperature <= 0:
            raise ValidationError(f"bias source {self.name!r}: temperature must be > 0")
        if self.gate_mask is not None:
            self.gate_mask = np.asarray(self.gate_mask, dtype=bool)
            if self.gate_mask.shape != (self.probs.shape[0],):
                raise ValidationError(
                    f"bias source {self.name!r}: gate mask length mismatch"
                )


@dataclass
class EnsembleContext:
    """Per-example bias information consumed by the debiasing loss adapters.

    `adjustment[i]` is the summed, weighted, max-centered log-bias row added
    to the main logits under PoE; `fused_bias[i]` is the normalized product
    distribution the reweight adapter draws its gold-label probability from.
    Gated-off rows contribute exactly zero adjustment and a uniform fused row.
    """

    sources: list[BiasSource]
    clip_eps: float = DEFAULT_CLIP_EPS
    distill_targets: Optional[np.ndarray] = None
    adjustment: np.ndarray = field(init=False)
    fused_bias: np.ndarray = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.clip_eps <= 1e-3):
            raise ValidationError(f"clip_eps must be in (0, 1e-3], got {self.clip_eps}")
        if not self.sources and self.distill_targets is None:
            raise ValidationError("an ensemble context needs at least one bias source")
        n = c = None
        for src in self.sources:
            if n is None:
                n, c = src.probs.shape
            elif src.probs.shape != (n, c):
                raise ValidationError(
                    f"bias source {src.name!r}: shape {src.probs.shape} != {(n, c)}"
                )
        if self.distill_targets is not None:
            self.distill_targets = _validate_prob_rows(self.distill_targets, "distill targets")
            if n is None:
                n, c = self.distill_targets.shape
            elif self.distill_targets.shape != (n, c):
                raise ValidationError("distill targets shape mismatch with bias sources")
        adj = np.zeros((n, c), dtype=np.float64)
        for src in self.sources:
            shifted = _centered_log(src.probs, self.clip_eps, src.temperature)
            if src.gate_mask is not None:
                shifted = np.where(src.gate_mask[:, None], shifted, 0.0)
            adj += src.weight * shifted
        self.adjustment = adj
        # Normalized product of the weighted sources; rows with zero
        # adjustment come out exactly uniform.
        e = np.exp(adj - adj.max(axis=1, keepdims=True))
        self.fused_bias = e / e.sum(axis=1, keepdims=True)

    def __len__(self) -> int:
        return self.adjustment.shape[0]

    @property
    def num_classes(self) -> int:
        return self.adjustment.shape[1]


def poe_fuse(main_logits: np.ndarray, ctx: EnsembleContext, example_index: int) -> np.ndarray:
    """softmax(main logits + weighted log-bias) for one example."""
    from .models import softmax

    z = np.asarray(main_logits, dtype=np.float64)
    return softmax(z + ctx.adjustment[example_index])


def poe_loss_and_grad(main_logits: np.ndarray, ctx: EnsembleContext,
                      example_index: int, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of the fused distribution and its gradient in the main
    logits; the bias term is constant, so the gradient reaches only the main
    model."""
    p_hat = poe_fuse(main_logits, ctx, example_index)
    loss = -float(np.log(p_hat[label]))
    grad = p_hat.copy()
    grad[label] -= 1.0
    return loss, grad


def reweight_weight(bias_probs: np.ndarray, label: int) -> float:
    """1 - (bias probability on the gold label); a perfectly-predicted
    example contributes nothing."""
    probs = _validate_prob_rows(np.asarray(bias_probs, dtype=np.float64)[None, :],
                                "bias probs")[0]
    return float(1.0 - probs[label])


def self_distill_targets(teacher_probs: np.ndarray, bias_prob_correct: float,
                         eps: float = DEFAULT_CLIP_EPS) -> np.ndarray:
    """Teacher distribution raised to (1 - bias prob on gold), renormalized.

    A confident bias model flattens the target toward uniform; a clueless one
    leaves the teacher untouched.
    """
    t = np.asarray(teacher_probs, dtype=np.float64)
    _validate_prob_rows(t[None, :], "teacher probs")
    if not (0.0 <= bias_prob_correct <= 1.0):
        raise ValidationError(f"bias_prob_correct must be in [0, 1], got {bias_prob_correct}")
    t = np.clip(t, eps, 1.0)
    powered = t ** (1.0 - bias_prob_correct)
    return powered / powered.sum()


def conditional_bias_vector(example: Example, source_spec: BiasFeatureSpec,
                            bias_model, feature_config: Optional[FeatureConfig] = None) -> np.ndarray:
    """Bias model probabilities when the gate feature holds, uniform otherwise."""
    from .models import predict_proba

    c = bias_model.spec.num_classes
    if feature_holds(source_spec, example, feature_config):
        return predict_proba(bias_model, example)
    return np.full(c, 1.0 / c)


# ---------------------------------------------------------------------------
# Context builders
# ---------------------------------------------------------------------------

def context_from_models(bias_models: Sequence, dataset: Dataset,
                        weights: Optional[Sequence[float]] = None,
                        gates: Optional[Sequence[Optional[BiasFeatureSpec]]] = None,
                        clip_eps: float = DEFAULT_CLIP_EPS,
                        temperature: float = 1.0,
                        feature_config: Optional[FeatureConfig] = None) -> EnsembleContext:
    """Run each frozen bias model over the dataset and build the context.

    Rows stay aligned to the dataset's example order so the trainer can index
    by shuffled row numbers.
    """
    from .models import encode_dataset, predict_proba_batch

    if weights is None:
        weights = [1.0] * len(bias_models)
    if gates is None:
        gates = [None] * len(bias_models)
    if not (len(weights) == len(gates) == len(bias_models)):
        raise ValidationError("bias_models, weights, and gates must align")
    sources = []
    for model, w, gate in zip(bias_models, weights, gates):
        if model.spec.num_classes != dataset.num_classes:
            raise ValidationError(
                f"bias model {model.spec.name!r} has {model.spec.num_classes} classes, "
                f"dataset has {dataset.num_classes}"
            )
        enc = encode_dataset(dataset, model.spec, model.vocab)
        probs = predict_proba_batch(model, enc)
        mask = None
        if gate is not None:
            mask = np.asarray(
                [feature_holds(gate, ex, feature_config) for ex in dataset], dtype=bool
            )
        sources.append(BiasSource(name=model.spec.name, probs=probs, weight=w,
                                  gate_mask=mask, temperature=temperature))
    return EnsembleContext(sources=sources, clip_eps=clip_eps)


def distill_context(teacher_probs: np.ndarray, bias_ctx: EnsembleContext,
                    labels: np.ndarray, eps: float = DEFAULT_CLIP_EPS) -> EnsembleContext:
    """Scale the teacher's rows by the fused bias probability on each gold
    label and wrap them as training targets."""
    teacher_probs = _validate_prob_rows(teacher_probs, "teacher probs")
    labels = np.asarray(labels, dtype=np.int64)
    if teacher_probs.shape[0] != len(labels) or teacher_probs.shape != bias_ctx.fused_bias.shape:
        raise ValidationError("teacher probs, labels, and bias context must align")
    b_correct = bias_ctx.fused_bias[np.arange(len(labels)), labels]
    t = np.clip(teacher_probs, eps, 1.0)
    powered = t ** (1.0 - b_correct)[:, None]
    targets = powered / powered.sum(axis=1, keepdims=True)
    return EnsembleContext(sources=bias_ctx.sources, clip_eps=bias_ctx.clip_eps,
                           distill_targets=targets)


# ---------------------------------------------------------------------------
# Batch loss adapters (used by models.train)
# ---------------------------------------------------------------------------

def loss_and_dlogits(adapter, logits: np.ndarray, labels: np.ndarray,
                     ctx: Optional[EnsembleContext], rows: np.ndarray
                     ) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient in the logits for one adapter.

    The returned dlogits already include the 1/B batch-mean factor.
    """
    from .models import LossAdapter, log_softmax

    b = logits.shape[0]
    onehot_rows = (np.arange(b), labels)
    if adapter is LossAdapter.PLAIN_CE:
        logp = log_softmax(logits)
        loss = -logp[onehot_rows].mean()
        grad = np.exp(logp)
        grad[onehot_rows] -= 1.0
        return float(loss), grad / b
    if adapter is LossAdapter.POE:
        fused = logits + ctx.adjustment[rows]
        logp = log_softmax(fused)
        loss = -logp[onehot_rows].mean()
        grad = np.exp(logp)
        grad[onehot_rows] -= 1.0
        return float(loss), grad / b
    if adapter is LossAdapter.REWEIGHT:
        w = 1.0 - ctx.fused_bias[rows, labels]
        logp = log_softmax(logits)
        loss = (w * -logp[onehot_rows]).mean()
        grad = np.exp(logp)
        grad[onehot_rows] -= 1.0
        return float(loss), (w[:, None] * grad) / b
    if adapter is LossAdapter.DISTILL:
        if ctx.distill_targets is None:
            raise ValidationError("DISTILL training needs distill targets in the context")
        s = ctx.distill_targets[rows]
        logp = log_softmax(logits)
        loss = -(s * logp).sum(axis=1).mean()
        grad = np.exp(logp) - s
        return float(loss), grad / b
    raise ValidationError(f"unknown loss adapter {adapter}")


# ---------------------------------------------------------------------------
# Probability caches (JSONL keyed by example id)
# ---------------------------------------------------------------------------

def write_prob_cache(path: str | Path, ids: Sequence[str], probs: np.ndarray) -> None:
    probs = _validate_prob_rows(np.asarray(probs, dtype=np.float64), "prob cache")
    if len(ids) != probs.shape[0]:
        raise ValidationError("ids and probability rows must align")
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex_id, row in zip(ids, probs):
            fh.write(json.dumps({"id": ex_id, "probs": row.tolist()}) + "\n")


def read_prob_cache(path: str | Path, dataset: Dataset) -> np.ndarray:
    """Aligned (N, C) probability rows for a dataset; every id must be present."""
    by_id: dict[str, list[float]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path} line {lineno}: malformed JSON ({exc.msg})")
            by_id[obj["id"]] = obj["probs"]
    rows = []
    for ex in dataset:
        if ex.id not in by_id:
            raise ValidationError(f"prob cache {path}: missing example id {ex.id!r}")
        rows.append(by_id[ex.id])
    probs = np.asarray(rows, dtype=np.float64)
    if probs.shape[1] != dataset.num_classes:
        raise ValidationError(
            f"prob cache {path}: {probs.shape[1]} classes, dataset has {dataset.num_classes}"
        )
    return _validate_prob_rows(probs, f"prob cache {path}")
