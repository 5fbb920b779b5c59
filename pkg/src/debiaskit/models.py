"""Trainable classifiers: the capacity ladder, backprop, optimizers, serialization.

Three architectures form the ladder standing in for increasingly large
pretrained encoders: a logistic regression over handcrafted bias features,
a linear bag-of-words classifier over averaged token embeddings, and a
tanh MLP on the same encoding. All math is float64 numpy with manually
derived gradients so they can be verified against finite differences.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bias_features import FeatureConfig, feature_vector
from .corpus import Dataset, Example, Vocab, build_vocab, tokenize
from .errors import NumericError, ValidationError

__all__ = [
    "Arch",
    "InputMode",
    "LossAdapter",
    "OptimizerKind",
    "ModelSpec",
    "TrainConfig",
    "ParamStore",
    "Model",
    "EncodedDataset",
    "softmax",
    "log_softmax",
    "encode_dataset",
    "forward",
    "forward_batch",
    "predict_proba",
    "predict_proba_batch",
    "train",
    "save",
    "load",
]

CHECKPOINT_MAGIC = "debiaskit-model"
CHECKPOINT_SCHEMA_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Arch(enum.Enum):
    FEATURE_LOGREG = "feature_logreg"
    BOW_LINEAR = "bow_linear"
    MLP = "mlp"


class InputMode(enum.Enum):
    PAIR = "pair"
    A_ONLY = "a_only"
    B_ONLY = "b_only"
    FEATURES = "features"


class LossAdapter(enum.Enum):
    PLAIN_CE = "plain_ce"
    POE = "poe"
    REWEIGHT = "reweight"
    DISTILL = "distill"


class OptimizerKind(enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class ModelSpec:
    """A point on the capacity ladder plus everything needed to rebuild it."""

    arch: Arch
    input_mode: InputMode
    num_classes: int
    hidden_dims: tuple[int, ...] = ()
    embed_dim: int = 16
    init_seed: int = 0
    feature_config: Optional[FeatureConfig] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.arch is Arch.MLP and not self.hidden_dims:
            raise ValidationError("MLP needs non-empty hidden_dims")
        if self.arch is not Arch.MLP and self.hidden_dims:
            raise ValidationError(f"{self.arch.value} takes no hidden_dims")
        if (self.arch is Arch.FEATURE_LOGREG) != (self.input_mode is InputMode.FEATURES):
            raise ValidationError(
                "FEATURE_LOGREG and input_mode FEATURES imply each other"
            )
        if self.arch is Arch.FEATURE_LOGREG and self.feature_config is None:
            object.__setattr__(self, "feature_config", FeatureConfig())
        if self.arch is not Arch.FEATURE_LOGREG and self.embed_dim < 1:
            raise ValidationError("embed_dim must be >= 1")
        if not self.name:
            if self.arch is Arch.MLP:
                auto = "mlp_" + "x".join(str(h) for h in self.hidden_dims)
            else:
                auto = self.arch.value
            object.__setattr__(self, "name", auto)

    @property
    def encoder_input_dim(self) -> int:
        if self.arch is Arch.FEATURE_LOGREG:
            return self.feature_config.dim
        return 2 * self.embed_dim if self.input_mode is InputMode.PAIR else self.embed_dim


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run; all defaults are config, not code."""

    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-2
    optimizer: OptimizerKind = OptimizerKind.ADAM
    seed: int = 0
    loss_adapter: LossAdapter = LossAdapter.PLAIN_CE

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


class ParamStore:
    """Flat real-valued parameter store with named slices."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    @property
    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def flat(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.count:
            raise ValidationError(f"expected {self.count} values, got {vec.size}")
        offset = 0
        for name, arr in self.arrays.items():
            self.arrays[name] = vec[offset:offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.arrays.items()})

    def check_finite(self) -> None:
        for name, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in parameter {name!r}")


@dataclass
class Model:
    """A spec plus its parameters; immutable during inference."""

    spec: ModelSpec
    params: ParamStore
    vocab: Optional[Vocab] = None
    train_epoch_losses: tuple[float, ...] = ()

    @property
    def param_count(self) -> int:
        return self.params.count


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

@dataclass
class EncodedDataset:
    """Dense per-example inputs: normalized token counts or feature rows.

    A bag-of-words average of token embeddings equals (counts / length) @ E,
    so encoding a dataset once into count matrices turns every forward pass
    into a single matmul.
    """

    labels: np.ndarray
    ids: tuple[str, ...]
    norm_a: Optional[np.ndarray] = None   # (N, V) counts_a / max(len_a, 1)
    norm_b: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None  # (N, F)

    def __len__(self) -> int:
        return self.labels.shape[0]


def _count_matrix(texts: Sequence[Optional[str]], vocab: Vocab) -> np.ndarray:
    mat = np.zeros((len(texts), vocab.size), dtype=np.float64)
    for i, text in enumerate(texts):
        toks = tokenize(text) if text else []
        if not toks:
            continue
        idx = np.asarray(vocab.encode(toks), dtype=np.int64)
        np.add.at(mat[i], idx, 1.0)
        mat[i] /= len(toks)
    return mat


def encode_dataset(dataset: Dataset, spec: ModelSpec,
                   vocab: Optional[Vocab] = None) -> EncodedDataset:
    """Encode every example for the given spec's input mode."""
    labels = np.asarray([ex.label for ex in dataset], dtype=np.int64)
    ids = tuple(ex.id for ex in dataset)
    if spec.arch is Arch.FEATURE_LOGREG:
        rows = [feature_vector(ex, spec.feature_config) for ex in dataset]
        feats = np.vstack(rows) if rows else np.zeros((0, spec.feature_config.dim))
        if feats.shape[1] != spec.feature_config.dim:
            raise ValidationError(
                f"feature dim {feats.shape[1]} != configured {spec.feature_config.dim}"
            )
        return EncodedDataset(labels=labels, ids=ids, features=feats)
    if vocab is None:
        raise ValidationError(f"{spec.arch.value} needs a Vocab to encode")
    norm_a = norm_b = None
    if spec.input_mode in (InputMode.PAIR, InputMode.A_ONLY):
        norm_a = _count_matrix([ex.text_a for ex in dataset], vocab)
    if spec.input_mode in (InputMode.PAIR, InputMode.B_ONLY):
        norm_b = _count_matrix([ex.text_b for ex in dataset], vocab)
    return EncodedDataset(labels=labels, ids=ids, norm_a=norm_a, norm_b=norm_b)


# ---------------------------------------------------------------------------
# Initialization, forward, backward
# ---------------------------------------------------------------------------

def init_params(spec: ModelSpec, vocab: Optional[Vocab] = None) -> ParamStore:
    """Symmetric uniform init scaled by fan-in; output layer starts at zero
    so a fresh model emits all-zero logits."""
    rng = np.random.default_rng(spec.init_seed)
    arrays: dict[str, np.ndarray] = {}
    if spec.arch is Arch.FEATURE_LOGREG:
        in_dim = spec.feature_config.dim
    else:
        if vocab is None:
            raise ValidationError("token models need a Vocab at init")
        d = spec.embed_dim
        arrays["embed"] = rng.uniform(-1.0, 1.0, size=(vocab.size, d)) / np.sqrt(d)
        in_dim = spec.encoder_input_dim
    if spec.arch is Arch.MLP:
        prev = in_dim
        for i, h in enumerate(spec.hidden_dims):
            arrays[f"W_h{i}"] = rng.uniform(-1.0, 1.0, size=(h, prev)) / np.sqrt(prev)
            arrays[f"b_h{i}"] = np.zeros(h)
            prev = h
        in_dim = prev
    arrays["W_out"] = np.zeros((spec.num_classes, in_dim))
    arrays["b_out"] = np.zeros(spec.num_classes)
    return ParamStore(arrays)


def new_model(spec: ModelSpec, vocab: Optional[Vocab] = None) -> Model:
    return Model(spec=spec, params=init_params(spec, vocab), vocab=vocab)


def _encode_input(model: Model, enc: EncodedDataset, rows: np.ndarray):
    """Gather the dense input block X for a batch of rows, with the pieces
    needed to push gradients back into the embedding table."""
    spec = model.spec
    if spec.arch is Arch.FEATURE_LOGREG:
        return enc.features[rows], None, None
    E = model.params["embed"]
    na = enc.norm_a[rows] if enc.norm_a is not None else None
    nb = enc.norm_b[rows] if enc.norm_b is not None else None
    if spec.input_mode is InputMode.PAIR:
        X = np.concatenate([na @ E, nb @ E], axis=1)
    elif spec.input_mode is InputMode.A_ONLY:
        X = na @ E
    else:
        X = nb @ E
    return X, na, nb


def forward_batch(model: Model, enc: EncodedDataset, rows: Optional[np.ndarray] = None,
                  want_cache: bool = False):
    """Logits for a batch of encoded rows (all rows when rows is None)."""
    if rows is None:
        rows = np.arange(len(enc))
    X, na, nb = _encode_input(model, enc, rows)
    hiddens: list[np.ndarray] = []
    h = X
    if model.spec.arch is Arch.MLP:
        for i in range(len(model.spec.hidden_dims)):
            h = np.tanh(h @ model.params[f"W_h{i}"].T + model.params[f"b_h{i}"])
            hiddens.append(h)
    logits = h @ model.params["W_out"].T + model.params["b_out"]
    if want_cache:
        return logits, (X, na, nb, hiddens)
    return logits


def backward_batch(model: Model, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(logits) for one batch.

    dlogits must already carry the batch-mean scaling, so the returned
    gradients are those of the batch-mean loss.
    """
    X, na, nb, hiddens = cache
    spec = model.spec
    grads: dict[str, np.ndarray] = {}
    top = hiddens[-1] if hiddens else X
    grads["W_out"] = dlogits.T @ top
    grads["b_out"] = dlogits.sum(axis=0)
    dh = dlogits @ model.params["W_out"]
    if spec.arch is Arch.MLP:
        for i in range(len(spec.hidden_dims) - 1, -1, -1):
            act = hiddens[i]
            da = dh * (1.0 - act * act)  # tanh'
            below = hiddens[i - 1] if i > 0 else X
            grads[f"W_h{i}"] = da.T @ below
            grads[f"b_h{i}"] = da.sum(axis=0)
            dh = da @ model.params[f"W_h{i}"]
    if spec.arch is not Arch.FEATURE_LOGREG:
        d = spec.embed_dim
        if spec.input_mode is InputMode.PAIR:
            grads["embed"] = na.T @ dh[:, :d] + nb.T @ dh[:, d:]
        elif spec.input_mode is InputMode.A_ONLY:
            grads["embed"] = na.T @ dh
        else:
            grads["embed"] = nb.T @ dh
    return grads


def _encode_one(model: Model, example: Example, vocab: Optional[Vocab]) -> EncodedDataset:
    ds = Dataset((example,), tuple(f"c{i}" for i in range(model.spec.num_classes)))
    return encode_dataset(ds, model.spec, vocab or model.vocab)


def forward(model: Model, example: Example, vocab: Optional[Vocab] = None) -> np.ndarray:
    """Length-C logits for a single example."""
    enc = _encode_one(model, example, vocab)
    logits = forward_batch(model, enc)
    if not np.all(np.isfinite(logits)):
        raise NumericError(f"non-finite logits for example {example.id!r}")
    return logits[0]


def predict_proba(model: Model, example: Example, vocab: Optional[Vocab] = None) -> np.ndarray:
    return softmax(forward(model, example, vocab))


def predict_proba_batch(model: Model, enc: EncodedDataset) -> np.ndarray:
    return softmax(forward_batch(model, enc))


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ParamStore, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            params.arrays[name] -= self.lr * g


class _Adam:
    """Adam with standard decay constants and bias correction."""

    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = ADAM_BETA1, ADAM_BETA2
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            params.arrays[name] -= self.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer is OptimizerKind.SGD:
        return _Sgd(cfg.learning_rate)
    return _Adam(cfg.learning_rate)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(spec: ModelSpec, data: Dataset, cfg: TrainConfig,
          ensemble_ctx=None, vocab: Optional[Vocab] = None) -> Model:
    """Train a fresh model; bias probabilities inside ensemble_ctx stay frozen.

    The context (required for every adapter except PLAIN_CE) must be aligned
    to `data`'s example order. Shuffling is driven by cfg.seed, parameter
    init by spec.init_seed, so the same (spec, data, cfg) reproduces
    bit-identical parameters.
    """
    from . import ensemble as ens

    if len(data) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if data.num_classes != spec.num_classes:
        raise ValidationError(
            f"dataset has {data.num_classes} classes, spec expects {spec.num_classes}"
        )
    if cfg.loss_adapter is not LossAdapter.PLAIN_CE and ensemble_ctx is None:
        raise ValidationError(f"{cfg.loss_adapter.value} training needs an ensemble context")
    if ensemble_ctx is not None and len(ensemble_ctx) != len(data):
        raise ValidationError(
            f"ensemble context covers {len(ensemble_ctx)} examples, dataset has {len(data)}"
        )
    if spec.arch is not Arch.FEATURE_LOGREG and vocab is None:
        vocab = build_vocab(data)
    enc = encode_dataset(data, spec, vocab)
    model = new_model(spec, vocab)
    optimizer = _make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = perm[start:start + cfg.batch_size]
            logits, cache = forward_batch(model, enc, rows, want_cache=True)
            loss, dlogits = ens.loss_and_dlogits(
                cfg.loss_adapter, logits, enc.labels[rows], ensemble_ctx, rows
            )
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {start // cfg.batch_size} "
                    f"(learning_rate={cfg.learning_rate})"
                )
            grads = backward_batch(model, cache, dlogits)
            optimizer.step(model.params, grads)
            total += loss * len(rows)
        epoch_losses.append(total / n)
    model.params.check_finite()
    model.train_epoch_losses = tuple(epoch_losses)
    return model


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _spec_to_json(spec: ModelSpec) -> dict:
    fc = None
    if spec.feature_config is not None:
        c = spec.feature_config
        if c.bias_spec is not None:
            raise ValidationError(
                "feature configs with a bias_spec are not serializable; "
                "rebuild them from the run config instead"
            )
        fc = {
            "include": list(c.include),
            "negation_lexicon": sorted(c.negation_lexicon),
            "subseq_mode": c.subseq_mode,
            "token_indicators": list(c.token_indicators),
        }
    return {
        "arch": spec.arch.value,
        "input_mode": spec.input_mode.value,
        "num_classes": spec.num_classes,
        "hidden_dims": list(spec.hidden_dims),
        "embed_dim": spec.embed_dim,
        "init_seed": spec.init_seed,
        "feature_config": fc,
        "name": spec.name,
    }


def _spec_from_json(obj: dict) -> ModelSpec:
    fc = None
    if obj.get("feature_config") is not None:
        c = obj["feature_config"]
        fc = FeatureConfig(
            include=tuple(c["include"]),
            negation_lexicon=frozenset(c["negation_lexicon"]),
            subseq_mode=c["subseq_mode"],
            token_indicators=tuple(c["token_indicators"]),
        )
    return ModelSpec(
        arch=Arch(obj["arch"]),
        input_mode=InputMode(obj["input_mode"]),
        num_classes=obj["num_classes"],
        hidden_dims=tuple(obj["hidden_dims"]),
        embed_dim=obj["embed_dim"],
        init_seed=obj["init_seed"],
        feature_config=fc,
        name=obj.get("name", ""),
    )


def save(model: Model, path: str | Path) -> None:
    """Self-describing text container; float64 values round-trip bit-exactly
    through JSON's shortest-repr encoding."""
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "spec": _spec_to_json(model.spec),
        "vocab": None if model.vocab is None else {
            "token_to_index": model.vocab.token_to_index,
            "min_count": model.vocab.min_count,
        },
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in model.params.arrays.items()
        },
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load(path: str | Path) -> Model:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"checkpoint {path}: truncated or corrupt ({exc.msg})")
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValidationError(f"checkpoint {path}: bad magic string")
    if payload.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValidationError(
            f"checkpoint {path}: schema_version {payload.get('schema_version')} "
            f"!= {CHECKPOINT_SCHEMA_VERSION}"
        )
    spec = _spec_from_json(payload["spec"])
    vocab = None
    if payload.get("vocab") is not None:
        vocab = Vocab(token_to_index=dict(payload["vocab"]["token_to_index"]),
                      min_count=payload["vocab"]["min_count"])
    reference = init_params(spec, vocab)
    arrays: dict[str, np.ndarray] = {}
    for name, ref in reference.arrays.items():
        if name not in payload["params"]:
            raise ValidationError(f"checkpoint {path}: missing parameter {name!r}")
        entry = payload["params"][name]
        shape = tuple(entry["shape"])
        if shape != ref.shape:
            raise ValidationError(
                f"checkpoint {path}: parameter {name!r} has shape {shape}, "
                f"spec expects {ref.shape}"
            )
        arrays[name] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
    extra = set(payload["params"]) - set(reference.arrays)
    if extra:
        raise ValidationError(f"checkpoint {path}: unexpected parameters {sorted(extra)}")
    return Model(spec=spec, params=ParamStore(arrays), vocab=vocab)
