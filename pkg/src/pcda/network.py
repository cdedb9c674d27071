"""Point-cloud classifier: shared per-point MLP, max pooling, fully connected head.

Parameters live in :class:`ModelParams` as plain float64 arrays keyed by name
(``enc0.W``, ``enc0.b``, ..., ``fc1.W``, ``fc2.W``, ``fc3.W``). Forward passes
build :mod:`pcda.autodiff` graphs so any scalar built from them can be
differentiated with :func:`gradient`.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .discrepancy import KernelFamily
from .errors import (
    BatchTooSmall,
    EmptyCloud,
    LabelOutOfRange,
    NonFiniteLoss,
    ShapeMismatch,
)
from .pointcloud import PointCloud

ENCODER_WIDTHS = (64, 64, 64, 128, 1024)
HEAD_WIDTHS = (512, 256)


@dataclass
class ModelParams:
    tensors: dict[str, np.ndarray]
    encoder_widths: tuple[int, ...]
    head_widths: tuple[int, ...]
    num_classes: int
    in_dim: int = 3
    frozen: set[str] = field(default_factory=set)

    @property
    def encoder_names(self) -> list[str]:
        return [f"enc{i}.{p}" for i in range(len(self.encoder_widths)) for p in "Wb"]

    @property
    def head_names(self) -> list[str]:
        return [f"fc{i + 1}.{p}" for i in range(len(self.head_widths) + 1) for p in "Wb"]

    @property
    def names(self) -> list[str]:
        return self.encoder_names + self.head_names

    def trainable(self) -> list[str]:
        return [n for n in self.names if n not in self.frozen]

    def frozen_mask(self) -> dict[str, bool]:
        return {n: n in self.frozen for n in self.names}

    def freeze_encoder(self) -> None:
        self.frozen |= set(self.encoder_names)

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.tensors.items()},
            self.encoder_widths,
            self.head_widths,
            self.num_classes,
            self.in_dim,
            set(self.frozen),
        )

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes, fan_in = {}, self.in_dim
        for i, w in enumerate(self.encoder_widths):
            shapes[f"enc{i}.W"], shapes[f"enc{i}.b"] = (fan_in, w), (w,)
            fan_in = w
        for i, w in enumerate(tuple(self.head_widths) + (self.num_classes,)):
            shapes[f"fc{i + 1}.W"], shapes[f"fc{i + 1}.b"] = (fan_in, w), (w,)
            fan_in = w
        return shapes

    def check_shapes(self) -> None:
        for name, shape in self.layer_shapes().items():
            got = self.tensors.get(name)
            if got is None or got.shape != shape:
                raise ShapeMismatch(
                    f"{name}: expected {shape}, got {None if got is None else got.shape}"
                )


def init_params(
    num_classes: int,
    seed: int = 0,
    encoder_widths: Sequence[int] = ENCODER_WIDTHS,
    head_widths: Sequence[int] = HEAD_WIDTHS,
    in_dim: int = 3,
) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    params = ModelParams({}, tuple(encoder_widths), tuple(head_widths), num_classes, in_dim)
    rng = np.random.default_rng(seed)
    for name, shape in params.layer_shapes().items():
        if name.endswith(".b"):
            params.tensors[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params.tensors[name] = rng.uniform(-limit, limit, shape)
    return params


@dataclass
class HeadActivations:
    fc1: np.ndarray
    fc2: np.ndarray
    logits: np.ndarray


# --------------------------------------------------------------- batching


def as_batch(clouds) -> tuple[np.ndarray, np.ndarray]:
    """Point table and segment offsets for a list of clouds / arrays or a (B, n, 3) array."""
    if isinstance(clouds, np.ndarray) and clouds.ndim == 3:
        B, n, _ = clouds.shape
        if n == 0:
            raise EmptyCloud("clouds must contain at least one point")
        return (
            np.ascontiguousarray(clouds.reshape(B * n, -1), dtype=np.float64),
            np.arange(B + 1, dtype=np.int64) * n,
        )
    arrays = [c.points if isinstance(c, PointCloud) else np.asarray(c) for c in clouds]
    counts = np.array([len(a) for a in arrays], dtype=np.int64)
    if len(arrays) == 0 or (counts < 1).any():
        raise EmptyCloud("every cloud needs at least one point")
    offsets = np.zeros(len(arrays) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return np.ascontiguousarray(np.concatenate(arrays), dtype=np.float64), offsets


# ------------------------------------------------------------- forward


def _vars(params: ModelParams) -> dict[str, ad.Var]:
    return {k: ad.Var(v, name=k) for k, v in params.tensors.items()}


def _encode(points: np.ndarray, offsets: np.ndarray, params: ModelParams, V) -> ad.Var:
    if points.shape[1] != params.in_dim:
        raise ShapeMismatch(f"points have {points.shape[1]} coordinates, expected {params.in_dim}")
    h = ad.Var(points)
    for i in range(len(params.encoder_widths)):
        h = ad.relu(ad.dense(h, V[f"enc{i}.W"], V[f"enc{i}.b"]))
    return ad.segment_max(h, offsets)


def _head(g: ad.Var, params: ModelParams, V):
    n_hidden = len(params.head_widths)
    acts = []
    h = g
    for i in range(n_hidden):
        h = ad.relu(ad.dense(h, V[f"fc{i + 1}.W"], V[f"fc{i + 1}.b"]))
        acts.append(h)
    logits = ad.dense(h, V[f"fc{n_hidden + 1}.W"], V[f"fc{n_hidden + 1}.b"])
    return acts, logits


def _encode_fast(points: np.ndarray, offsets: np.ndarray, params: ModelParams) -> np.ndarray:
    # graph-free path; keeps only one activation layer alive
    if points.shape[1] != params.in_dim:
        raise ShapeMismatch(f"points have {points.shape[1]} coordinates, expected {params.in_dim}")
    from .kernels import segment_max

    h = points
    for i in range(len(params.encoder_widths)):
        h = h @ params.tensors[f"enc{i}.W"]
        h += params.tensors[f"enc{i}.b"]
        np.maximum(h, 0.0, out=h)
    return segment_max(h, offsets)[0]


def encoder_forward(clouds, params: ModelParams) -> np.ndarray:
    """Global features, one row per cloud."""
    points, offsets = as_batch(clouds)
    return _encode_fast(points, offsets, params)


def head_forward(features: np.ndarray, params: ModelParams) -> HeadActivations:
    features = np.asarray(features, dtype=np.float64)
    want = params.encoder_widths[-1]
    if features.ndim != 2 or features.shape[1] != want:
        raise ShapeMismatch(f"features shape {features.shape}, expected (batch, {want})")
    n_hidden = len(params.head_widths)
    if n_hidden < 2:
        raise ShapeMismatch("head needs two hidden layers to expose fc1/fc2")
    h = features
    hidden = []
    for i in range(n_hidden):
        h = np.maximum(h @ params.tensors[f"fc{i + 1}.W"] + params.tensors[f"fc{i + 1}.b"], 0.0)
        hidden.append(h)
    logits = h @ params.tensors[f"fc{n_hidden + 1}.W"] + params.tensors[f"fc{n_hidden + 1}.b"]
    return HeadActivations(hidden[0], hidden[1], logits)


def predict(clouds, params: ModelParams, chunk: int = 64) -> np.ndarray:
    """Argmax class per cloud, evaluated in chunks to bound memory."""
    clouds = list(clouds)
    out = []
    for s in range(0, len(clouds), chunk):
        acts = head_forward(encoder_forward(clouds[s : s + chunk], params), params)
        out.append(np.argmax(acts.logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------- losses


def _check_labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in 0..{k - 1}")
    return labels


def cross_entropy(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1])
    return float(ad.cross_entropy(ad.Var(logits), labels).value)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0
    beta: float = 0.5
    lam: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta", "lam"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name}={v} must be finite and >= 0")


@dataclass
class LossTerms:
    total: float
    ce: float
    mmd_fc1: float
    mmd_fc2: float
    coral_fc1: float
    coral_fc2: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def _families(family) -> tuple[KernelFamily, KernelFamily]:
    if isinstance(family, KernelFamily):
        return family, family
    f1, f2 = family
    return f1, f2


def _combined(src_acts, src_logits, labels, tgt_acts, weights: LossWeights, family):
    """Graph for the weighted sum; returns (total Var, per-term Vars)."""
    if src_acts[0].shape[0] < 2 or tgt_acts[0].shape[0] < 2:
        raise BatchTooSmall("source and target batches need >= 2 rows")
    fam1, fam2 = _families(family)
    ce = ad.cross_entropy(src_logits, labels)
    mmd1 = ad.mk_mmd2(src_acts[0], tgt_acts[0], fam1)
    mmd2 = ad.mk_mmd2(src_acts[1], tgt_acts[1], fam2)
    cor1 = ad.coral(src_acts[0], tgt_acts[0])
    cor2 = ad.coral(src_acts[1], tgt_acts[1])
    tot = (
        weights.alpha * ce
        + weights.beta * mmd1
        + weights.beta * mmd2
        + weights.lam * cor1
        + weights.lam * cor2
    )
    return tot, (ce, mmd1, mmd2, cor1, cor2)


def _terms(tot, parts) -> LossTerms:
    return LossTerms(float(tot.value), *(float(p.value) for p in parts))


def combined_loss(
    source: HeadActivations,
    labels,
    target: HeadActivations,
    weights: LossWeights,
    family,
) -> LossTerms:
    """Weighted cross-entropy plus MMD and CORAL at fc1 and fc2.

    ``family`` is one :class:`KernelFamily` for both layers or an (fc1, fc2) pair.
    """
    labels = _check_labels(labels, source.logits.shape[1])
    V = lambda a: ad.Var(a)  # noqa: E731
    tot, parts = _combined(
        (V(source.fc1), V(source.fc2)), V(source.logits), labels,
        (V(target.fc1), V(target.fc2)), weights, family,
    )
    return _terms(tot, parts)


# -------------------------------------------------------------- gradients


def gradient(loss_fn: Callable[[dict[str, ad.Var]], ad.Var], params: ModelParams):
    """Value and per-tensor gradients of ``loss_fn``.

    ``loss_fn`` receives a name -> :class:`~pcda.autodiff.Var` mapping and must
    return a scalar Var. Frozen and unused tensors get zero gradients.
    """
    V = _vars(params)
    out = loss_fn(V)
    value = float(out.value)
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss evaluated to {value}")
    ad.backward(out)
    grads = {}
    for name, var in V.items():
        if name in params.frozen or var.grad is None:
            grads[name] = np.zeros_like(params.tensors[name])
        else:
            grads[name] = var.grad
    return value, grads


def supervised_loss_and_grad(params: ModelParams, clouds, labels):
    """Cross-entropy of a labelled batch; returns (loss, grads, logits)."""
    points, offsets = as_batch(clouds)
    labels = _check_labels(labels, params.num_classes)
    captured = {}

    def fn(V):
        _, logits = _head(_encode(points, offsets, params, V), params, V)
        captured["logits"] = logits.value
        return ad.cross_entropy(logits, labels)

    value, grads = gradient(fn, params)
    return value, grads, captured["logits"]


def adaptation_loss_and_grad(
    params: ModelParams,
    source_clouds,
    labels,
    target_clouds,
    weights: LossWeights,
    family,
    return_logits: bool = False,
):
    """Combined loss over paired source/target batches and its gradients.

    ``family`` may also be a callable ``(fc_s, fc_t) -> KernelFamily``, evaluated
    on the current activations of each layer (e.g. the median heuristic).
    """
    sp, so = as_batch(source_clouds)
    tp, to = as_batch(target_clouds)
    labels = _check_labels(labels, params.num_classes)
    encoder_frozen = all(n in params.frozen for n in params.encoder_names)
    captured = {}

    def fn(V):
        if encoder_frozen:
            gs = ad.Var(_encode_fast(sp, so, params))
            gt = ad.Var(_encode_fast(tp, to, params))
        else:
            gs = _encode(sp, so, params, V)
            gt = _encode(tp, to, params, V)
        s_acts, s_logits = _head(gs, params, V)
        t_acts, _ = _head(gt, params, V)
        fam = family
        if callable(family) and not isinstance(family, KernelFamily):
            fam = (
                family(s_acts[0].value, t_acts[0].value),
                family(s_acts[1].value, t_acts[1].value),
            )
        tot, parts = _combined(s_acts[:2], s_logits, labels, t_acts[:2], weights, fam)
        captured["terms"] = _terms(tot, parts)
        captured["logits"] = s_logits.value
        return tot

    _, grads = gradient(fn, params)
    if return_logits:
        return captured["terms"], grads, captured["logits"]
    return captured["terms"], grads


# -------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One Adam update in place. Frozen tensors are never written."""
    for name in params.trainable():
        if name in grads and grads[name].shape != params.tensors[name].shape:
            raise ShapeMismatch(f"gradient for {name} has shape {grads[name].shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name in params.trainable():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params.tensors[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ------------------------------------------------------------ checkpoints
#
# Checkpoints are uncompressed ``.npz`` archives without pickles:
#   param/<name>       float64 tensor
#   frozen/<name>      bool scalar
#   adam/m/<name>, adam/v/<name>   float64 moment estimates (if present)
#   meta               JSON string: widths, classes, Adam scalars, config fingerprint


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, params: ModelParams, state: AdamState | None = None, config=None):
    arrays = {}
    for name in params.names:
        arrays[f"param/{name}"] = params.tensors[name]
        arrays[f"frozen/{name}"] = np.array(name in params.frozen)
    meta = {
        "encoder_widths": list(params.encoder_widths),
        "head_widths": list(params.head_widths),
        "num_classes": params.num_classes,
        "in_dim": params.in_dim,
        "config": config or {},
        "fingerprint": config_fingerprint(config or {}),
    }
    if state is not None:
        meta["adam"] = {k: getattr(state, k) for k in ("lr", "beta1", "beta2", "eps", "t")}
        for name in state.m:
            arrays[f"adam/m/{name}"] = state.m[name]
            arrays[f"adam/v/{name}"] = state.v[name]
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelParams, AdamState | None, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        params = ModelParams(
            {},
            tuple(meta["encoder_widths"]),
            tuple(meta["head_widths"]),
            int(meta["num_classes"]),
            int(meta["in_dim"]),
        )
        for name in params.names:
            params.tensors[name] = z[f"param/{name}"].copy()
            if bool(z[f"frozen/{name}"]):
                params.frozen.add(name)
        state = None
        if "adam" in meta:
            state = AdamState(**meta["adam"])
            for key in z.files:
                if key.startswith("adam/m/"):
                    state.m[key[7:]] = z[key].copy()
                elif key.startswith("adam/v/"):
                    state.v[key[7:]] = z[key].copy()
    params.check_shapes()
    return params, state, meta
