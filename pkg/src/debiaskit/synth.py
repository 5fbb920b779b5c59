"""Synthetic text-pair corpora with planted spurious correlations.

Every example carries a deterministic genuine signal in text_a (one token
drawn from a small class-specific set, so the label is always recoverable)
and a planted bias pattern in text_b whose agreement with the label is
controlled by bias_strength. Challenge examples carry another class's
pattern, breaking the training-time correlation. Keeping signal and bias on
opposite sides means a bias model reading only text_b can never capture the
genuine signal, mirroring claim-only/evidence-only bias setups.

Pattern kinds:
  LEXICAL      one bias token per class (linearly learnable)
  XOR          two-token pattern whose class is the XOR of the token
               indicators (not linearly learnable; 2 classes only)
  TWO_LEXICAL  two independent LEXICAL families (for multi-bias fusion)
  PAIR_OVERLAP full lexical overlap of text_b with text_a, tied to class 0

Generation uses numpy's PCG64 generator seeded with config.seed and consumes
draws in a fixed documented order (train pool, dev pool, challenge pool), so
a seed reproduces byte-identical datasets.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .bias_features import BiasFeatureSpec, FeatureKind, feature_holds
from .corpus import Dataset, Example
from .errors import ValidationError

__all__ = [
    "BiasKind",
    "SynthConfig",
    "SynthBundle",
    "generate",
    "planted_feature_families",
    "bias_label_correlation",
    "empirical_bias_match_rate",
    "config_hash",
]


class BiasKind(enum.Enum):
    LEXICAL = "lexical"
    XOR = "xor"
    PAIR_OVERLAP = "pair_overlap"
    TWO_LEXICAL = "two_lexical"


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int
    train_size: int
    dev_size: int
    test_size: int
    vocab_size: int
    seq_len: int
    bias_kind: BiasKind
    bias_strength: float
    seed: int
    signal_variants: int = 8
    # text_b length; None means seq_len. A short text_b makes the planted
    # pattern more salient than the diluted signal under bag-of-words
    # averaging, which is what lets a plainly-trained model shortcut.
    seq_len_b: Optional[int] = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("infeasible config: need num_classes >= 2")
        if not (0.0 <= self.bias_strength <= 1.0):
            raise ValidationError("bias_strength must be in [0, 1]")
        if self.vocab_size <= 2 * self.num_classes + 2:
            raise ValidationError(
                f"vocab_size must exceed 2*C+2 = {2 * self.num_classes + 2}"
            )
        if self.seq_len < 4:
            raise ValidationError("seq_len must be >= 4")
        if self.seq_len_b is not None and self.seq_len_b < 2:
            raise ValidationError("seq_len_b must be >= 2")
        if self.signal_variants < 1:
            raise ValidationError("signal_variants must be >= 1")
        if self.bias_kind is BiasKind.XOR and self.num_classes != 2:
            raise ValidationError("infeasible config: XOR bias requires exactly 2 classes")
        if min(self.train_size, self.dev_size, self.test_size) < 1:
            raise ValidationError("all split sizes must be >= 1")
        if self._filler_count() < self.seq_len + 2:
            raise ValidationError(
                "infeasible config: vocab_size leaves too few filler tokens "
                f"({self._filler_count()}) for seq_len {self.seq_len}"
            )

    @property
    def side_b_len(self) -> int:
        return self.seq_len if self.seq_len_b is None else self.seq_len_b

    def _pattern_tokens(self) -> list[str]:
        c = self.num_classes
        if self.bias_kind is BiasKind.LEXICAL:
            return [f"bias{k}" for k in range(c)]
        if self.bias_kind is BiasKind.XOR:
            return ["xu", "xv"]
        if self.bias_kind is BiasKind.TWO_LEXICAL:
            return [f"biasa{k}" for k in range(c)] + [f"biasb{k}" for k in range(c)]
        return []

    def _filler_count(self) -> int:
        reserved = self.num_classes * self.signal_variants + len(self._pattern_tokens())
        return self.vocab_size - reserved

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(f"class{c}" for c in range(self.num_classes))


def config_hash(config: SynthConfig) -> str:
    obj = asdict(config)
    obj["bias_kind"] = config.bias_kind.value
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SynthBundle:
    """generate()'s output: train, the dev pool and its easy/challenge split,
    and a purpose-built anti-correlated challenge set."""

    train: Dataset
    dev_pool: Dataset
    dev_easy: Dataset
    dev_challenge: Dataset
    test_challenge: Dataset


class _Maker:
    """Stateful example builder; consumes rng draws in a fixed order."""

    def __init__(self, config: SynthConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        self.fillers = [f"w{k}" for k in range(config._filler_count())]

    def _fill(self, tokens: list[str], length: int) -> str:
        pad = self.rng.integers(0, len(self.fillers), size=length - len(tokens))
        toks = tokens + [self.fillers[i] for i in pad]
        order = self.rng.permutation(len(toks))
        return " ".join(toks[i] for i in order)

    def _signal_side(self, y: int) -> str:
        j = int(self.rng.integers(0, self.cfg.signal_variants))
        return self._fill([f"sig{y}v{j}"], self.cfg.seq_len)

    def _other_class(self, y: int) -> int:
        k = int(self.rng.integers(0, self.cfg.num_classes - 1))
        return k if k < y else k + 1

    def _pattern_class(self, y: int, anti: bool) -> int:
        if anti:
            return self._other_class(y)
        if self.rng.random() < self.cfg.bias_strength:
            return y
        return self._other_class(y)

    def _xor_tokens(self, value: int) -> list[str]:
        if value == 1:
            return [["xu"], ["xv"]][int(self.rng.integers(0, 2))]
        return [[], ["xu", "xv"]][int(self.rng.integers(0, 2))]

    def make(self, ex_id: str, y: int, anti: bool) -> tuple[Example, bool]:
        """Build one example; returns (example, bias_matches_label).

        anti=True forces every planted pattern to disagree with the label
        (challenge construction). TWO_LEXICAL anti examples carry exactly one
        family, alternating by example index, so each half of a challenge set
        isolates one bias.
        """
        cfg = self.cfg
        text_a = self._signal_side(y)
        if cfg.bias_kind is BiasKind.LEXICAL:
            k = self._pattern_class(y, anti)
            text_b = self._fill([f"bias{k}"], cfg.side_b_len)
            return Example(ex_id, text_a, text_b, y), k == y
        if cfg.bias_kind is BiasKind.XOR:
            k = self._pattern_class(y, anti)
            text_b = self._fill(self._xor_tokens(k), cfg.side_b_len)
            return Example(ex_id, text_a, text_b, y), k == y
        if cfg.bias_kind is BiasKind.TWO_LEXICAL:
            if anti:
                which = int(ex_id.rsplit("-", 1)[1]) % 2
                k = self._other_class(y)
                tok = f"biasa{k}" if which == 0 else f"biasb{k}"
                text_b = self._fill([tok], cfg.side_b_len)
                return Example(ex_id, text_a, text_b, y), False
            ka = self._pattern_class(y, False)
            kb = self._pattern_class(y, False)
            text_b = self._fill([f"biasa{ka}", f"biasb{kb}"], cfg.side_b_len)
            return Example(ex_id, text_a, text_b, y), ka == y and kb == y
        # PAIR_OVERLAP: the pattern is full overlap tied to class 0.
        if anti:
            present = True
        elif y == 0:
            present = self.rng.random() < cfg.bias_strength
        else:
            present = self.rng.random() >= cfg.bias_strength
        prem_tokens = text_a.split()
        hyp_len = cfg.side_b_len if cfg.seq_len_b is not None else max(2, cfg.seq_len // 2)
        pick = self.rng.integers(0, len(prem_tokens), size=hyp_len)
        hyp = [prem_tokens[i] for i in pick]
        if not present:
            prem_set = set(prem_tokens)
            outside = [w for w in self.fillers if w not in prem_set]
            hyp[int(self.rng.integers(0, hyp_len))] = outside[
                int(self.rng.integers(0, len(outside)))
            ]
        order = self.rng.permutation(hyp_len)
        text_b = " ".join(hyp[i] for i in order)
        matches = present == (y == 0)
        return Example(ex_id, text_a, text_b, y), matches


def _balanced_labels(n: int, c: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.array([i % c for i in range(n)], dtype=np.int64)
    rng.shuffle(labels)
    return labels


def _challenge_labels(n: int, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    if config.bias_kind is BiasKind.PAIR_OVERLAP:
        # The overlap pattern belongs to class 0; challenge labels break it.
        labels = np.array([1 + i % (config.num_classes - 1) for i in range(n)],
                          dtype=np.int64)
        rng.shuffle(labels)
        return labels
    return _balanced_labels(n, config.num_classes, rng)


def generate(config: SynthConfig) -> SynthBundle:
    """Produce the four datasets of one synthetic task.

    Train and dev pools are i.i.d. with bias-match probability
    config.bias_strength; the dev pool is partitioned into easy (pattern
    agrees with the label, or no pattern) and challenge (pattern disagrees);
    test_challenge is built entirely from anti-matched examples.
    """
    rng = np.random.default_rng(config.seed)
    maker = _Maker(config, rng)
    names = config.label_names
    prov = f"synth:{config_hash(config)}"

    def pool(prefix: str, labels: np.ndarray, anti: bool):
        examples, matches = [], []
        for i, y in enumerate(labels):
            ex, m = maker.make(f"{prefix}-{i:05d}", int(y), anti)
            examples.append(ex)
            matches.append(m)
        return examples, matches

    train_examples, _ = pool("train", _balanced_labels(config.train_size,
                                                       config.num_classes, rng), False)
    dev_examples, dev_matches = pool("dev", _balanced_labels(config.dev_size,
                                                             config.num_classes, rng), False)
    chal_examples, _ = pool("chal", _challenge_labels(config.test_size, config, rng), True)

    train = Dataset(tuple(train_examples), names, provenance=prov + ":train")
    dev_pool = Dataset(tuple(dev_examples), names, provenance=prov + ":dev")
    easy = tuple(ex for ex, m in zip(dev_examples, dev_matches) if m)
    hard = tuple(ex for ex, m in zip(dev_examples, dev_matches) if not m)
    return SynthBundle(
        train=train,
        dev_pool=dev_pool,
        dev_easy=Dataset(easy, names, provenance=prov + ":dev_easy"),
        dev_challenge=Dataset(hard, names, provenance=prov + ":dev_challenge"),
        test_challenge=Dataset(tuple(chal_examples), names, provenance=prov + ":test_challenge"),
    )


# ---------------------------------------------------------------------------
# Planted feature specs
# ---------------------------------------------------------------------------

def _token_rule(token: str):
    def rule(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> bool:
        return token in tokens_b
    return rule

def _xor_rule(value: int):
    def rule(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> bool:
        return (("xu" in tokens_b) != ("xv" in tokens_b)) == bool(value)
    return rule


def planted_feature_families(config: SynthConfig) -> dict[str, list[BiasFeatureSpec]]:
    """One spec per planted pattern, grouped by independent bias family.

    For multi-class pattern families there is one spec per class, each paired
    with the class the pattern spuriously predicts.
    """
    c = config.num_classes
    if config.bias_kind is BiasKind.LEXICAL:
        return {"lexical": [
            BiasFeatureSpec(FeatureKind.PLANTED, k, planted_token_rule=_token_rule(f"bias{k}"),
                            name=f"lexical[{k}]")
            for k in range(c)
        ]}
    if config.bias_kind is BiasKind.XOR:
        return {"xor": [
            BiasFeatureSpec(FeatureKind.PLANTED, k, planted_token_rule=_xor_rule(k),
                            name=f"xor[{k}]")
            for k in range(2)
        ]}
    if config.bias_kind is BiasKind.TWO_LEXICAL:
        return {
            "bias_a": [
                BiasFeatureSpec(FeatureKind.PLANTED, k,
                                planted_token_rule=_token_rule(f"biasa{k}"),
                                name=f"bias_a[{k}]")
                for k in range(c)
            ],
            "bias_b": [
                BiasFeatureSpec(FeatureKind.PLANTED, k,
                                planted_token_rule=_token_rule(f"biasb{k}"),
                                name=f"bias_b[{k}]")
                for k in range(c)
            ],
        }
    return {"all_in_p": [BiasFeatureSpec(FeatureKind.ALL_IN_P, 0, name="all_in_p[0]")]}


def bias_label_correlation(dataset: Dataset, spec: BiasFeatureSpec) -> float:
    """P(label == bias target | feature present), estimated by counting."""
    positive = 0
    hits = 0
    for ex in dataset:
        if feature_holds(spec, ex):
            positive += 1
            hits += ex.label == spec.bias_target_label
    if positive == 0:
        raise ValidationError(f"feature {spec.name!r} never fires on this dataset")
    return hits / positive


def empirical_bias_match_rate(dataset: Dataset, config: SynthConfig) -> dict[str, float]:
    """Per-family fraction of examples whose planted pattern agrees with the
    label; the generator targets bias_strength for i.i.d. pools."""
    out: dict[str, float] = {}
    for family, specs in planted_feature_families(config).items():
        matched = 0
        covered = 0
        for ex in dataset:
            firing = [s for s in specs if feature_holds(s, ex)]
            if not firing:
                continue
            covered += 1
            if any(s.bias_target_label == ex.label for s in firing):
                matched += 1
        if covered:
            out[family] = matched / covered
    return out
