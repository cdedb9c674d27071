"""Kernel two-sample statistics: multi-kernel MMD and CORAL, with gradients.

Feature batches are ``(n, d)`` float64 arrays. The gradient functions return the
statistic together with its derivatives w.r.t. both batches; kernel bandwidths
are treated as constants (no gradient flows through the median heuristic).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmall, DimensionMismatch
from .kernels import pairwise_sqdist


@dataclass(frozen=True)
class KernelFamily:
    """Convex combination of Gaussian kernels."""

    bandwidths: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        bw = tuple(float(s) for s in self.bandwidths)
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "weights", w)
        if len(bw) < 1 or len(bw) != len(w):
            raise ValueError("need b >= 1 bandwidths with matching weights")
        if any(not s > 0 for s in bw):
            raise ValueError("bandwidths must be positive")
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    @property
    def size(self) -> int:
        return len(self.bandwidths)

    @classmethod
    def single(cls, sigma: float) -> "KernelFamily":
        return cls((sigma,), (1.0,))


def default_family(base_sigma: float, count: int = 5, multiplier: float = 2.0) -> KernelFamily:
    """``count`` equally weighted Gaussians spaced geometrically around ``base_sigma``.

    With the defaults the bandwidths are ``base_sigma * (1/4, 1/2, 1, 2, 4)``.
    """
    if not base_sigma > 0:
        raise ValueError("base_sigma must be positive")
    bw = tuple(base_sigma * multiplier ** (u - count // 2) for u in range(count))
    return KernelFamily(bw, (1.0 / count,) * count)


def _check_pair(X, Y, min_rows: int = 0):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"feature shapes {X.shape} and {Y.shape} are incompatible")
    if len(X) < min_rows or len(Y) < min_rows:
        raise BatchTooSmall(f"need >= {min_rows} rows per batch, got {len(X)} and {len(Y)}")
    return X, Y


def gaussian_gram(X, Y, sigma: float) -> np.ndarray:
    """``K[i, j] = exp(-|x_i - y_j|^2 / (2 sigma^2))``."""
    X, Y = _check_pair(X, Y)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return np.exp(-pairwise_sqdist(X, Y) / (2.0 * sigma * sigma))


def median_bandwidth(X, Y) -> float:
    """Median heuristic on the pooled batch; falls back to 1 when the median is 0."""
    X, Y = _check_pair(X, Y)
    Z = np.concatenate([X, Y])
    if len(Z) < 2:
        raise BatchTooSmall("median heuristic needs at least two points")
    D = pairwise_sqdist(Z, Z)
    med = float(np.median(D[np.triu_indices(len(Z), k=1)]))
    return float(np.sqrt(med)) if med > 0 else 1.0


def _family_gram(D: np.ndarray, family: KernelFamily) -> np.ndarray:
    K = np.zeros_like(D)
    for s, w in zip(family.bandwidths, family.weights):
        K += w * np.exp(-D / (2.0 * s * s))
    return K


def mk_mmd2(Xs, Xt, family: KernelFamily) -> float:
    """Biased (V-statistic) squared MMD under the family's combined kernel."""
    Xs, Xt = _check_pair(Xs, Xt, 2)
    kss = _family_gram(pairwise_sqdist(Xs, Xs), family).mean()
    kst = _family_gram(pairwise_sqdist(Xs, Xt), family).mean()
    ktt = _family_gram(pairwise_sqdist(Xt, Xt), family).mean()
    return float(kss - 2.0 * kst + ktt)


def mk_mmd2_grad(Xs, Xt, family: KernelFamily) -> tuple[float, np.ndarray, np.ndarray]:
    Xs, Xt = _check_pair(Xs, Xt, 2)
    ns, nt = len(Xs), len(Xt)
    Z = np.concatenate([Xs, Xt])
    D = pairwise_sqdist(Z, Z)
    coef = np.empty_like(D)
    coef[:ns, :ns] = 1.0 / (ns * ns)
    coef[ns:, ns:] = 1.0 / (nt * nt)
    coef[:ns, ns:] = -1.0 / (ns * nt)
    coef[ns:, :ns] = -1.0 / (ns * nt)

    K = np.zeros_like(D)
    dK = np.zeros_like(D)  # d K / d D, elementwise
    for s, w in zip(family.bandwidths, family.weights):
        e = w * np.exp(-D / (2.0 * s * s))
        K += e
        dK -= e / (2.0 * s * s)
    value = float((coef * K).sum())
    # d D_ij / d z_i = 2 (z_i - z_j); symmetric coef and D double the row term
    M = coef * dK
    gZ = 4.0 * (M.sum(axis=1)[:, None] * Z - M @ Z)
    return value, gZ[:ns], gZ[ns:]


def _covariance(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / (len(X) - 1), Xc


def coral(Xs, Xt) -> float:
    """``|C_s - C_t|_F^2 / (4 d^2)`` with unbiased (1/(n-1)) covariances."""
    Xs, Xt = _check_pair(Xs, Xt, 2)
    d = Xs.shape[1]
    diff = _covariance(Xs)[0] - _covariance(Xt)[0]
    return float((diff * diff).sum() / (4.0 * d * d))


def coral_grad(Xs, Xt) -> tuple[float, np.ndarray, np.ndarray]:
    Xs, Xt = _check_pair(Xs, Xt, 2)
    d = Xs.shape[1]
    Cs, Xsc = _covariance(Xs)
    Ct, Xtc = _covariance(Xt)
    diff = Cs - Ct
    value = float((diff * diff).sum() / (4.0 * d * d))
    G = diff / (2.0 * d * d)  # d value / d C_s
    gs = 2.0 * Xsc @ G / (len(Xs) - 1)
    gt = -2.0 * Xtc @ G / (len(Xt) - 1)
    return value, gs, gt
