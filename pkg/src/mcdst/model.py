"""The multichannel text CNN: parameters, forward pass, loss, exact backward
pass, thresholded prediction, and checkpoint serialization.

Each channel owns its own filter banks (one bank per filter height). A filter
slides over the channel's token matrix (valid convolution), passes through
ReLU, and is reduced to one scalar by max-over-positions pooling. The pooled
features of all filters are concatenated across channels, optionally hit by
inverted dropout (training only), and fed to a sigmoid output layer that
scores every candidate value of the slot independently.

Checkpoints are a directory: ``manifest.json`` plus one raw little-endian
float64 file per parameter tensor, CRC-32 checked on load.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .embeddings import TokenizerKind
from .numkit import sigmoid

__all__ = [
    "ChannelSpec",
    "MultichannelCNN",
    "AlwaysEmptyModel",
    "ForwardCache",
    "Gradients",
    "CheckpointError",
    "default_channel_specs",
    "init_model",
    "forward",
    "loss",
    "backward",
    "predict_labels",
    "save_model",
    "load_model",
]

FORMAT_VERSION = 1

_CHANNEL_TOKENIZERS = {
    "english_word": TokenizerKind.ENGLISH_LOWER_WHITESPACE,
    "chinese_word": TokenizerKind.CHINESE_WORD_GREEDY,
    "chinese_char": TokenizerKind.CHINESE_CHAR,
}


class CheckpointError(ValueError):
    """Raised when a checkpoint directory is missing, corrupt, or mismatched."""


@dataclass(frozen=True)
class ChannelSpec:
    """One language view of the input: its tokenizer, embedding width, and
    filter-bank geometry."""

    name: str
    tokenizer: TokenizerKind
    embedding_dim: int
    filter_heights: tuple[int, ...] = (1, 2)
    filters_per_height: int = 1000

    def __post_init__(self):
        if not self.filter_heights:
            raise ValueError("filter_heights must be non-empty")
        if any(h < 1 for h in self.filter_heights):
            raise ValueError("filter heights must be strictly positive")
        if list(self.filter_heights) != sorted(set(self.filter_heights)):
            raise ValueError("filter heights must be strictly ascending")
        if self.filters_per_height < 1:
            raise ValueError("filters_per_height must be >= 1")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")

    @property
    def max_height(self) -> int:
        return self.filter_heights[-1]


def default_channel_specs(
    embedding_dims: dict[str, int],
    filters_per_height: int = 1000,
    filter_heights: tuple[int, ...] = (1, 2),
    names: Sequence[str] = ("english_word", "chinese_word", "chinese_char"),
) -> list[ChannelSpec]:
    """The standard three-channel layout (or any subset of it by name)."""
    specs = []
    for name in names:
        if name not in _CHANNEL_TOKENIZERS:
            raise ValueError(f"unknown channel {name!r}")
        specs.append(
            ChannelSpec(
                name=name,
                tokenizer=_CHANNEL_TOKENIZERS[name],
                embedding_dim=embedding_dims[name],
                filter_heights=tuple(filter_heights),
                filters_per_height=filters_per_height,
            )
        )
    return specs


@dataclass
class MultichannelCNN:
    """Per-channel filter banks plus the shared sigmoid output layer.

    ``filters[c][h]`` has shape (filters_per_height, height, embedding_dim)
    and ``filter_biases[c][h]`` shape (filters_per_height,), following the
    order of ``channels`` and each channel's ``filter_heights``.
    """

    channels: tuple[ChannelSpec, ...]
    filters: list[list[np.ndarray]]
    filter_biases: list[list[np.ndarray]]
    output_weights: np.ndarray
    output_bias: np.ndarray
    dropout_rate: float
    labels: tuple[str, ...]

    @property
    def feature_size(self) -> int:
        return sum(c.filters_per_height * len(c.filter_heights) for c in self.channels)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """All trainable tensors in a fixed, stable order."""
        out = []
        for ci, spec in enumerate(self.channels):
            for hi, h in enumerate(spec.filter_heights):
                out.append((f"ch{ci}_h{h}_filters", self.filters[ci][hi]))
                out.append((f"ch{ci}_h{h}_bias", self.filter_biases[ci][hi]))
        out.append(("output_weights", self.output_weights))
        out.append(("output_bias", self.output_bias))
        return out


@dataclass(frozen=True)
class AlwaysEmptyModel:
    """Stand-in for a slot with no positive training examples: every score is
    (numerically) zero, so the predicted value set is always empty."""

    labels: tuple[str, ...]

    def scores(self) -> np.ndarray:
        return np.full(len(self.labels), 1e-9)


@dataclass
class Gradients:
    filters: list[list[np.ndarray]]
    filter_biases: list[list[np.ndarray]]
    output_weights: np.ndarray
    output_bias: np.ndarray

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for ci, per_height in enumerate(self.filters):
            for hi, f in enumerate(per_height):
                out.append((f"ch{ci}[{hi}]_filters", f))
                out.append((f"ch{ci}[{hi}]_bias", self.filter_biases[ci][hi]))
        out.append(("output_weights", self.output_weights))
        out.append(("output_bias", self.output_bias))
        return out


@dataclass
class ForwardCache:
    """Everything backward() needs from one train-mode forward pass."""

    inputs: list[np.ndarray]                     # per channel token matrix
    pre: list[list[np.ndarray]]                  # per channel, per height (T, F)
    argmax: list[list[np.ndarray]]               # per channel, per height (F,) int
    concat: np.ndarray                           # pooled features, length M
    dropout_mask: np.ndarray | None              # scaled keep mask, or None
    dropped: np.ndarray                          # concat after dropout
    logits: np.ndarray
    scores: np.ndarray


# ---------------------------------------------------------------------------
# compiled bank kernels — same accumulation order as numkit.conv_valid
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _conv_bank_k(s, filters, biases):
    n, k = s.shape
    nf, d, _ = filters.shape
    out = np.empty((n - d + 1, nf), np.float64)
    for f in range(nf):
        for t in range(n - d + 1):
            acc = biases[f]
            for i in range(d):
                for j in range(k):
                    acc += filters[f, i, j] * s[t + i, j]
            out[t, f] = acc
    return out


@njit(cache=True, nogil=True)
def _conv_bank_vjp_k(s, filters, g):
    nf, d, k = filters.shape
    dfilters = np.zeros((nf, d, k), np.float64)
    dbiases = np.zeros(nf, np.float64)
    for f in range(nf):
        for t in range(g.shape[0]):
            gt = g[t, f]
            if gt == 0.0:
                continue
            dbiases[f] += gt
            for i in range(d):
                for j in range(k):
                    dfilters[f, i, j] += gt * s[t + i, j]
    return dfilters, dbiases


@njit(cache=True, nogil=True)
def _affine_fwd_k(w, x, b):
    out_dim, in_dim = w.shape
    y = np.empty(out_dim, np.float64)
    for o in range(out_dim):
        acc = b[o]
        for i in range(in_dim):
            acc += w[o, i] * x[i]
        y[o] = acc
    return y


@njit(cache=True, nogil=True)
def _affine_vjp_k(w, x, g):
    out_dim, in_dim = w.shape
    dw = np.empty((out_dim, in_dim), np.float64)
    dx = np.zeros(in_dim, np.float64)
    for o in range(out_dim):
        go = g[o]
        for i in range(in_dim):
            dw[o, i] = go * x[i]
            dx[i] += w[o, i] * go
    return dw, dx


# ---------------------------------------------------------------------------
# init / forward / loss / backward
# ---------------------------------------------------------------------------

def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


def init_model(
    channel_specs: Sequence[ChannelSpec],
    labels: Sequence[str],
    seed: int,
    dropout_rate: float = 0.4,
) -> MultichannelCNN:
    """Glorot-uniform filters and output weights, zero biases, seeded."""
    if not labels:
        raise ValueError("need at least one label")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    channels = tuple(channel_specs)
    filters: list[list[np.ndarray]] = []
    biases: list[list[np.ndarray]] = []
    for spec in channels:
        per_height = []
        per_bias = []
        for h in spec.filter_heights:
            shape = (spec.filters_per_height, h, spec.embedding_dim)
            per_height.append(_glorot(rng, shape, h * spec.embedding_dim, spec.filters_per_height))
            per_bias.append(np.zeros(spec.filters_per_height))
        filters.append(per_height)
        biases.append(per_bias)
    m = sum(c.filters_per_height * len(c.filter_heights) for c in channels)
    out_w = _glorot(rng, (len(labels), m), m, len(labels))
    return MultichannelCNN(
        channels=channels,
        filters=filters,
        filter_biases=biases,
        output_weights=out_w,
        output_bias=np.zeros(len(labels)),
        dropout_rate=float(dropout_rate),
        labels=tuple(labels),
    )


def forward(
    model: MultichannelCNN,
    channel_matrices: Sequence[np.ndarray],
    dropout_rng: np.random.Generator | None = None,
    dropout_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Score every label for one example.

    Inference mode when neither ``dropout_rng`` nor ``dropout_mask`` is given.
    Train mode samples an inverted-dropout mask from ``dropout_rng`` (no mask
    is sampled when dropout_rate is 0, making train and infer identical); a
    pre-scaled ``dropout_mask`` can be supplied instead to replay a pass.
    """
    if len(channel_matrices) != len(model.channels):
        raise ValueError(
            f"got {len(channel_matrices)} input matrices for {len(model.channels)} channels"
        )
    mats = []
    pre: list[list[np.ndarray]] = []
    argmax: list[list[np.ndarray]] = []
    pooled_parts: list[np.ndarray] = []
    for ci, spec in enumerate(model.channels):
        s = np.ascontiguousarray(channel_matrices[ci], dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != spec.embedding_dim:
            raise ValueError(
                f"channel {spec.name}: expected an n x {spec.embedding_dim} matrix, "
                f"got shape {s.shape}"
            )
        if s.shape[0] < spec.max_height:
            raise ValueError(
                f"channel {spec.name}: {s.shape[0]} rows < max filter height "
                f"{spec.max_height}; pad the input"
            )
        mats.append(s)
        pre_c, arg_c = [], []
        for hi, _h in enumerate(spec.filter_heights):
            p = _conv_bank_k(s, model.filters[ci][hi], model.filter_biases[ci][hi])
            act = np.maximum(p, 0.0)
            idx = np.argmax(act, axis=0)
            pre_c.append(p)
            arg_c.append(idx)
            pooled_parts.append(act[idx, np.arange(act.shape[1])])
        pre.append(pre_c)
        argmax.append(arg_c)
    z = np.concatenate(pooled_parts)

    mask = None
    if dropout_mask is not None:
        mask = np.ascontiguousarray(dropout_mask, dtype=np.float64)
        if mask.shape != z.shape:
            raise ValueError(f"dropout mask shape {mask.shape} != feature shape {z.shape}")
    elif dropout_rng is not None and model.dropout_rate > 0.0:
        keep = dropout_rng.random(z.shape[0]) >= model.dropout_rate
        mask = keep.astype(np.float64) / (1.0 - model.dropout_rate)
    dropped = z if mask is None else z * mask

    logits = _affine_fwd_k(model.output_weights, dropped, model.output_bias)
    scores = sigmoid(logits)
    cache = ForwardCache(
        inputs=mats,
        pre=pre,
        argmax=argmax,
        concat=z,
        dropout_mask=mask,
        dropped=dropped,
        logits=logits,
        scores=scores,
    )
    return scores, cache


def loss(scores: np.ndarray, gold_bits: np.ndarray, model: MultichannelCNN, l2_coeff: float) -> float:
    """Mean binary cross-entropy over labels plus L2 on weights (not biases)."""
    y = np.asarray(scores, dtype=np.float64)
    g = np.asarray(gold_bits, dtype=np.float64)
    if y.shape != g.shape:
        raise ValueError(f"scores shape {y.shape} != gold shape {g.shape}")
    data = -np.mean(g * np.log(y) + (1.0 - g) * np.log(1.0 - y))
    reg = 0.0
    if l2_coeff:
        for per_height in model.filters:
            for f in per_height:
                reg += float(np.sum(f * f))
        reg += float(np.sum(model.output_weights * model.output_weights))
    return float(data + l2_coeff * reg)


def backward(
    model: MultichannelCNN,
    cache: ForwardCache,
    gold_bits: np.ndarray,
    l2_coeff: float,
) -> Gradients:
    """Exact gradient of loss() with the dropout mask held fixed.

    Token matrices (frozen embeddings) receive no gradient.
    """
    g = np.asarray(gold_bits, dtype=np.float64)
    if g.shape != cache.scores.shape:
        raise ValueError(f"gold shape {g.shape} != score shape {cache.scores.shape}")
    n_labels = g.shape[0]
    dlogits = (cache.scores - g) / n_labels
    dw_out, ddropped = _affine_vjp_k(model.output_weights, cache.dropped, dlogits)
    if l2_coeff:
        dw_out += 2.0 * l2_coeff * model.output_weights
    dz = ddropped if cache.dropout_mask is None else ddropped * cache.dropout_mask

    dfilters: list[list[np.ndarray]] = []
    dbiases: list[list[np.ndarray]] = []
    off = 0
    for ci, spec in enumerate(model.channels):
        df_c, db_c = [], []
        for hi, _h in enumerate(spec.filter_heights):
            nf = spec.filters_per_height
            dpool = dz[off:off + nf]
            off += nf
            p = cache.pre[ci][hi]
            idx = cache.argmax[ci][hi]
            cols = np.arange(nf)
            dpre = np.zeros_like(p)
            # gradient routes to the argmax position, zeroed where ReLU clamped
            dpre[idx, cols] = np.where(p[idx, cols] > 0.0, dpool, 0.0)
            df, db = _conv_bank_vjp_k(cache.inputs[ci], model.filters[ci][hi], dpre)
            if l2_coeff:
                df += 2.0 * l2_coeff * model.filters[ci][hi]
            df_c.append(df)
            db_c.append(db)
        dfilters.append(df_c)
        dbiases.append(db_c)
    return Gradients(
        filters=dfilters,
        filter_biases=dbiases,
        output_weights=dw_out,
        output_bias=dlogits.copy(),
    )


def predict_labels(scores: np.ndarray, threshold: float, labels: Sequence[str]) -> set[str]:
    """Values whose score strictly exceeds the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be inside (0, 1)")
    scores = np.asarray(scores)
    if scores.shape[0] != len(labels):
        raise ValueError(f"{scores.shape[0]} scores for {len(labels)} labels")
    return {lab for lab, s in zip(labels, scores) if s > threshold}


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def save_model(model: MultichannelCNN | AlwaysEmptyModel, path) -> None:
    """Write a checkpoint directory: manifest.json + raw float64 tensor files."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(model, AlwaysEmptyModel):
        manifest = {
            "format_version": FORMAT_VERSION,
            "kind": "always_empty",
            "labels": list(model.labels),
        }
        (path / "manifest.json").write_text(
            json.dumps(manifest, indent=1, ensure_ascii=False) + "\n", "utf-8"
        )
        return
    tensors = []
    for name, arr in model.parameters():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        fname = f"{name}.f64"
        (path / fname).write_bytes(raw)
        tensors.append(
            {
                "name": name,
                "file": fname,
                "shape": list(arr.shape),
                "crc32": zlib.crc32(raw),
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "multichannel_cnn",
        "labels": list(model.labels),
        "dropout_rate": model.dropout_rate,
        "channels": [
            {
                "name": c.name,
                "tokenizer": c.tokenizer.value,
                "embedding_dim": c.embedding_dim,
                "filter_heights": list(c.filter_heights),
                "filters_per_height": c.filters_per_height,
            }
            for c in model.channels
        ],
        "tensors": tensors,
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=1, ensure_ascii=False) + "\n", "utf-8"
    )


def load_model(path) -> MultichannelCNN | AlwaysEmptyModel:
    """Load a checkpoint directory; bit-exact inverse of save_model."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise CheckpointError(f"no manifest.json in {path}")
    manifest = json.loads(mpath.read_text("utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version!r}, this build reads {FORMAT_VERSION}"
        )
    labels = tuple(manifest["labels"])
    if manifest.get("kind") == "always_empty":
        return AlwaysEmptyModel(labels=labels)

    channels = tuple(
        ChannelSpec(
            name=c["name"],
            tokenizer=TokenizerKind(c["tokenizer"]),
            embedding_dim=int(c["embedding_dim"]),
            filter_heights=tuple(int(h) for h in c["filter_heights"]),
            filters_per_height=int(c["filters_per_height"]),
        )
        for c in manifest["channels"]
    )
    loaded: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise CheckpointError(f"{path}: missing tensor file for {entry['name']!r}")
        raw = fpath.read_bytes()
        if zlib.crc32(raw) != entry["crc32"]:
            raise CheckpointError(f"{path}: checksum failure on tensor {entry['name']!r}")
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) * 8 if shape else 8
        if len(raw) != expected:
            raise CheckpointError(
                f"{path}: tensor {entry['name']!r} has {len(raw)} bytes, "
                f"shape {shape} needs {expected}"
            )
        loaded[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    filters: list[list[np.ndarray]] = []
    biases: list[list[np.ndarray]] = []
    for ci, spec in enumerate(channels):
        per_f, per_b = [], []
        for h in spec.filter_heights:
            fname, bname = f"ch{ci}_h{h}_filters", f"ch{ci}_h{h}_bias"
            for name in (fname, bname):
                if name not in loaded:
                    raise CheckpointError(f"{path}: manifest lists no tensor {name!r}")
            f = loaded[fname]
            if f.shape != (spec.filters_per_height, h, spec.embedding_dim):
                raise CheckpointError(
                    f"{path}: tensor {fname!r} has shape {f.shape}, expected "
                    f"{(spec.filters_per_height, h, spec.embedding_dim)}"
                )
            per_f.append(f)
            per_b.append(loaded[bname])
        filters.append(per_f)
        biases.append(per_b)
    for name in ("output_weights", "output_bias"):
        if name not in loaded:
            raise CheckpointError(f"{path}: manifest lists no tensor {name!r}")
    out_w = loaded["output_weights"]
    m = sum(c.filters_per_height * len(c.filter_heights) for c in channels)
    if out_w.shape != (len(labels), m):
        raise CheckpointError(
            f"{path}: tensor 'output_weights' has shape {out_w.shape}, expected {(len(labels), m)}"
        )
    return MultichannelCNN(
        channels=channels,
        filters=filters,
        filter_biases=biases,
        output_weights=out_w,
        output_bias=loaded["output_bias"],
        dropout_rate=float(manifest["dropout_rate"]),
        labels=labels,
    )
