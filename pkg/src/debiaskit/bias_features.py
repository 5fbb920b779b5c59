"""Surface bias predicates and the handcrafted feature vector.

The predicates detect shallow patterns that correlate with labels in biased
training data: full lexical overlap of the hypothesis with the premise, the
hypothesis appearing verbatim inside the premise, negation words in the
hypothesis, and planted token patterns in synthetic corpora. The feature
vector feeds the logistic-regression rung of the capacity ladder.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import Example, tokenize
from .errors import ValidationError

__all__ = [
    "FeatureKind",
    "BiasFeatureSpec",
    "FeatureConfig",
    "DEFAULT_NEGATION_LEXICON",
    "all_in_p",
    "h_is_subseq",
    "percent_in_p",
    "neg_in_h",
    "feature_holds",
    "feature_vector",
    "feature_names",
    "load_negation_lexicon",
]

DEFAULT_NEGATION_LEXICON = frozenset(
    {"no", "not", "none", "nothing", "never", "nobody", "neither", "nor", "n't"}
)

# Max value of the |hypothesis|/|premise| length-ratio feature; an empty
# premise saturates the ratio instead of dividing by zero.
LENGTH_RATIO_CAP = 4.0


class FeatureKind(enum.Enum):
    ALL_IN_P = "all_in_p"
    H_IS_SUBSEQ = "h_is_subseq"
    PERCENT_IN_P = "percent_in_p"
    NEG_IN_H = "neg_in_h"
    SINGLE_INPUT_A = "single_input_a"
    SINGLE_INPUT_B = "single_input_b"
    PLANTED = "planted"


# A planted rule sees (tokens_a, tokens_b) and says whether the pattern holds.
PlantedRule = Callable[[Sequence[str], Sequence[str]], bool]


@dataclass(frozen=True)
class BiasFeatureSpec:
    """A named bias predicate paired with the label it spuriously predicts."""

    kind: FeatureKind
    bias_target_label: int
    threshold: Optional[float] = None
    planted_token_rule: Optional[PlantedRule] = None
    name: str = ""

    def __post_init__(self):
        if self.bias_target_label < 0:
            raise ValidationError("bias_target_label must be >= 0")
        if self.threshold is not None and not (0.0 < self.threshold <= 1.0):
            raise ValidationError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.kind is FeatureKind.PERCENT_IN_P and self.threshold is None:
            raise ValidationError("PERCENT_IN_P used as a predicate needs a threshold")
        if self.kind is FeatureKind.PLANTED and self.planted_token_rule is None:
            raise ValidationError("PLANTED spec needs a planted_token_rule")
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)

    @property
    def is_predicate(self) -> bool:
        """Model-free feature kinds testable on a single example."""
        return self.kind not in (FeatureKind.SINGLE_INPUT_A, FeatureKind.SINGLE_INPUT_B)


def all_in_p(hyp: Sequence[str], prem: Sequence[str]) -> bool:
    """True iff every hypothesis token type occurs in the premise.

    Matching is by token type, not multiplicity; an empty hypothesis is
    vacuously true.
    """
    prem_types = set(prem)
    return all(t in prem_types for t in hyp)


def h_is_subseq(hyp: Sequence[str], prem: Sequence[str], mode: str = "contiguous") -> bool:
    """True iff the hypothesis appears inside the premise.

    "contiguous" requires an unbroken token run; "in_order" only requires the
    hypothesis tokens to appear in order. Empty hypothesis is true.
    """
    h, p = list(hyp), list(prem)
    if not h:
        return True
    if mode == "contiguous":
        n = len(h)
        return any(p[i:i + n] == h for i in range(len(p) - n + 1))
    if mode == "in_order":
        it = iter(p)
        return all(t in it for t in h)
    raise ValidationError(f"unknown subsequence mode {mode!r}")


def percent_in_p(hyp: Sequence[str], prem: Sequence[str]) -> float:
    """Fraction of hypothesis token positions whose type occurs in the premise.

    Counts positions, not types. Empty hypothesis is defined as 1.0, keeping
    the equivalence all_in_p <=> percent_in_p == 1.0.
    """
    if not hyp:
        return 1.0
    prem_types = set(prem)
    return sum(1 for t in hyp if t in prem_types) / len(hyp)


def neg_in_h(hyp: Sequence[str], lexicon: frozenset[str] = DEFAULT_NEGATION_LEXICON) -> bool:
    """True iff the hypothesis contains a negation word."""
    return any(t in lexicon for t in hyp)


def load_negation_lexicon(path: str | Path) -> frozenset[str]:
    """One token per line; blank lines ignored."""
    toks = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        tok = line.strip()
        if tok:
            toks.add(tok)
    if not toks:
        raise ValidationError(f"negation lexicon {path} is empty")
    return frozenset(toks)


BASE_FEATURES = ("all_in_p", "h_is_subseq", "percent_in_p", "neg_in_h",
                 "len_ratio", "bias_indicator")
# bias_indicator needs an explicit bias spec, so it is opt-in.
DEFAULT_FEATURES = BASE_FEATURES[:-1]


@dataclass(frozen=True)
class FeatureConfig:
    """Selects and parameterizes the columns of the handcrafted vector.

    token_indicators appends one 0/1 presence column per listed token; this is
    how planted synthetic bias tokens become visible to the logistic-regression
    bias model without giving it the answer precomputed (e.g. two XOR-pattern
    token indicators are individually useless to a linear model).
    """

    include: tuple[str, ...] = DEFAULT_FEATURES
    negation_lexicon: frozenset[str] = DEFAULT_NEGATION_LEXICON
    subseq_mode: str = "contiguous"
    bias_spec: Optional[BiasFeatureSpec] = None
    token_indicators: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "include", tuple(self.include))
        object.__setattr__(self, "token_indicators", tuple(self.token_indicators))
        for name in self.include:
            if name not in BASE_FEATURES:
                raise ValidationError(f"unknown feature {name!r}")
        if "bias_indicator" in self.include and self.bias_spec is None:
            raise ValidationError("bias_indicator feature needs a bias_spec")
        if self.dim == 0:
            raise ValidationError("feature config selects no features")

    @property
    def dim(self) -> int:
        return len(self.include) + len(self.token_indicators)


def feature_names(config: FeatureConfig) -> list[str]:
    return list(config.include) + [f"has[{t}]" for t in config.token_indicators]


def feature_holds(spec: BiasFeatureSpec, example: Example,
                  config: Optional[FeatureConfig] = None) -> bool:
    """Evaluate a predicate-kind spec on one example."""
    if not spec.is_predicate:
        raise ValidationError(
            f"{spec.kind.value} is model-based, not a predicate feature"
        )
    cfg = config or FeatureConfig()
    tok_a = tokenize(example.text_a)
    tok_b = tokenize(example.text_b) if example.text_b is not None else None
    if spec.kind is FeatureKind.PLANTED:
        return bool(spec.planted_token_rule(tok_a, tok_b or []))
    if spec.kind is FeatureKind.NEG_IN_H:
        if tok_b is None:
            raise ValidationError(f"example {example.id!r} lacks text_b for neg_in_h")
        return neg_in_h(tok_b, cfg.negation_lexicon)
    if tok_b is None:
        raise ValidationError(
            f"example {example.id!r} lacks text_b for {spec.kind.value}"
        )
    if spec.kind is FeatureKind.ALL_IN_P:
        return all_in_p(tok_b, tok_a)
    if spec.kind is FeatureKind.H_IS_SUBSEQ:
        return h_is_subseq(tok_b, tok_a, cfg.subseq_mode)
    if spec.kind is FeatureKind.PERCENT_IN_P:
        return percent_in_p(tok_b, tok_a) >= spec.threshold
    raise ValidationError(f"unhandled feature kind {spec.kind}")


def feature_vector(example: Example, config: Optional[FeatureConfig] = None) -> np.ndarray:
    """Deterministic dense feature vector for one example.

    Pair features require text_b; the length ratio saturates at
    LENGTH_RATIO_CAP instead of dividing by an empty premise.
    """
    cfg = config or FeatureConfig()
    pair_features = {"all_in_p", "h_is_subseq", "percent_in_p", "neg_in_h", "len_ratio"}
    needs_pair = bool(pair_features & set(cfg.include))
    tok_a = tokenize(example.text_a)
    tok_b: Optional[list[str]] = None
    if example.text_b is not None:
        tok_b = tokenize(example.text_b)
    elif needs_pair:
        raise ValidationError(
            f"example {example.id!r} lacks text_b but pair features are configured"
        )
    values: list[float] = []
    for name in cfg.include:
        if name == "all_in_p":
            values.append(float(all_in_p(tok_b, tok_a)))
        elif name == "h_is_subseq":
            values.append(float(h_is_subseq(tok_b, tok_a, cfg.subseq_mode)))
        elif name == "percent_in_p":
            values.append(percent_in_p(tok_b, tok_a))
        elif name == "neg_in_h":
            values.append(float(neg_in_h(tok_b, cfg.negation_lexicon)))
        elif name == "len_ratio":
            if not tok_a:
                values.append(LENGTH_RATIO_CAP)
            else:
                values.append(min(len(tok_b) / len(tok_a), LENGTH_RATIO_CAP))
        elif name == "bias_indicator":
            values.append(float(feature_holds(cfg.bias_spec, example, cfg)))
    if cfg.token_indicators:
        present = set(tok_a) | set(tok_b or [])
        values.extend(float(t in present) for t in cfg.token_indicators)
    vec = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"non-finite feature value for example {example.id!r}")
    return vec
