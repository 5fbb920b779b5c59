"""Data model, JSONL ingestion, tokenization, and vocabulary construction.

Everything downstream (feature predicates, bag-of-words encoders, split
builders) consumes the types defined here. Datasets and Vocabs are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ValidationError

__all__ = [
    "Example",
    "Dataset",
    "Vocab",
    "JsonlSchema",
    "tokenize",
    "load_jsonl",
    "save_jsonl",
    "build_vocab",
    "dataset_hash",
]


@dataclass(frozen=True)
class Example:
    """One labeled instance: a text (or text pair) plus an integer label."""

    id: str
    text_a: str
    text_b: Optional[str]
    label: int


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable collection of examples over a fixed label set."""

    examples: tuple[Example, ...]
    label_names: tuple[str, ...]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if len(self.label_names) < 2:
            raise ValidationError("a Dataset needs at least 2 label names")
        seen: set[str] = set()
        for ex in self.examples:
            if not (0 <= ex.label < len(self.label_names)):
                raise ValidationError(
                    f"example {ex.id!r}: label {ex.label} outside "
                    f"[0, {len(self.label_names)})"
                )
            if not ex.text_a:
                raise ValidationError(f"example {ex.id!r}: empty text_a")
            if ex.id in seen:
                raise ValidationError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def subset(self, examples: Iterable[Example], provenance: str = "") -> "Dataset":
        """New Dataset over the same label set (order as given)."""
        return Dataset(tuple(examples), self.label_names, provenance or self.provenance)


# Tokens are lowercased, split on whitespace, stripped of surrounding
# punctuation; the clitic "n't" becomes its own token so negation lookups
# ("n't" is in the default lexicon) see it.
_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Split text into normalized tokens. Empty input yields an empty list."""
    out: list[str] = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if not tok:
            continue
        if tok.endswith("n't") and len(tok) > 3:
            head = tok[:-3]
            if head:
                out.append(head)
            out.append("n't")
        else:
            out.append(tok)
    return out


@dataclass(frozen=True)
class JsonlSchema:
    """Field-name mapping from a JSONL file onto Example fields.

    label_names fixes the label order; it is never inferred from data order,
    so label indices stay stable across splits.
    """

    text_a: str
    label: str
    label_names: tuple[str, ...]
    text_b: Optional[str] = None
    id: Optional[str] = None
    text_b_optional: bool = False

    def __post_init__(self):
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if len(self.label_names) < 2:
            raise ValidationError("schema needs at least 2 label names")


def load_jsonl(path: str | Path, schema: JsonlSchema) -> Dataset:
    """Read one JSON object per line into a Dataset, in file order.

    Raises ValidationError naming the offending line number for malformed
    lines or missing fields, and naming the offending value for labels not
    covered by the schema.
    """
    path = Path(path)
    label_index = {name: i for i, name in enumerate(schema.label_names)}
    examples: list[Example] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})")
            if not isinstance(obj, dict):
                raise ValidationError(f"line {lineno}: expected a JSON object")
            for fname in (schema.text_a, schema.label):
                if fname not in obj:
                    raise ValidationError(f"line {lineno}: missing field {fname!r}")
            raw_label = obj[schema.label]
            if raw_label not in label_index:
                raise ValidationError(
                    f"line {lineno}: unknown label {raw_label!r} "
                    f"(expected one of {list(schema.label_names)})"
                )
            text_b = None
            if schema.text_b is not None:
                if schema.text_b in obj:
                    text_b = obj[schema.text_b]
                elif not schema.text_b_optional:
                    raise ValidationError(
                        f"line {lineno}: missing field {schema.text_b!r}"
                    )
            ex_id = str(obj[schema.id]) if schema.id and schema.id in obj else f"{path.stem}-{lineno}"
            examples.append(
                Example(id=ex_id, text_a=obj[schema.text_a], text_b=text_b,
                        label=label_index[raw_label])
            )
    return Dataset(tuple(examples), schema.label_names, provenance=str(path))


def save_jsonl(dataset: Dataset, path: str | Path, schema: JsonlSchema) -> None:
    """Write a Dataset back out in the schema's field names (round-trips)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in dataset:
            obj: dict = {}
            if schema.id:
                obj[schema.id] = ex.id
            obj[schema.text_a] = ex.text_a
            if schema.text_b is not None and ex.text_b is not None:
                obj[schema.text_b] = ex.text_b
            obj[schema.label] = dataset.label_names[ex.label]
            fh.write(json.dumps(obj, sort_keys=False) + "\n")


def dataset_hash(dataset: Dataset) -> str:
    """SHA-256 of a canonical serialization; used in run manifests."""
    h = hashlib.sha256()
    h.update(json.dumps(list(dataset.label_names)).encode())
    for ex in dataset:
        h.update(
            json.dumps(
                {"id": ex.id, "a": ex.text_a, "b": ex.text_b, "y": ex.label},
                sort_keys=True,
            ).encode()
        )
    return h.hexdigest()


@dataclass(frozen=True)
class Vocab:
    """Token-to-index map with index 0 reserved for unknown tokens."""

    token_to_index: dict[str, int]
    min_count: int = 1
    unk_index: int = field(default=0, init=False)

    @property
    def size(self) -> int:
        """Number of indices including the unknown slot."""
        return len(self.token_to_index) + 1

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, self.unk_index)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        get = self.token_to_index.get
        return [get(t, 0) for t in tokens]


def build_vocab(dataset: Dataset, min_count: int = 1) -> Vocab:
    """Count tokens over both text fields and assign dense indices.

    Tokens are sorted by (descending count, ascending lexicographic) before
    index assignment, so construction is deterministic.
    """
    if min_count < 1:
        raise ValidationError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for ex in dataset:
        counts.update(tokenize(ex.text_a))
        if ex.text_b is not None:
            counts.update(tokenize(ex.text_b))
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(token_to_index={t: i + 1 for i, t in enumerate(kept)},
                 min_count=min_count)
