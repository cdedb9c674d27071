"""Independent reference implementations and the self-check suite.

The brute-force statistics here use plain Python loops and ``math`` only, so
they share no code path with :mod:`pcda.discrepancy`.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import discrepancy, network
from .discrepancy import KernelFamily


def mmd2_bruteforce(Xs, Xt, bandwidths, weights) -> float:
    Xs = [list(map(float, r)) for r in Xs]
    Xt = [list(map(float, r)) for r in Xt]

    def k(a, b):
        d2 = 0.0
        for x, y in zip(a, b):
            d2 += (x - y) * (x - y)
        return sum(w * math.exp(-d2 / (2.0 * s * s)) for s, w in zip(bandwidths, weights))

    ss = sum(k(a, b) for a in Xs for b in Xs) / (len(Xs) ** 2)
    tt = sum(k(a, b) for a in Xt for b in Xt) / (len(Xt) ** 2)
    st = sum(k(a, b) for a in Xs for b in Xt) / (len(Xs) * len(Xt))
    return ss + tt - 2.0 * st


def _cov_bruteforce(X):
    n, d = len(X), len(X[0])
    mean = [sum(X[i][j] for i in range(n)) / n for j in range(d)]
    return [
        [sum((X[i][a] - mean[a]) * (X[i][b] - mean[b]) for i in range(n)) / (n - 1) for b in range(d)]
        for a in range(d)
    ]


def coral_bruteforce(Xs, Xt) -> float:
    Xs = [list(map(float, r)) for r in Xs]
    Xt = [list(map(float, r)) for r in Xt]
    d = len(Xs[0])
    Cs, Ct = _cov_bruteforce(Xs), _cov_bruteforce(Xt)
    fro = sum((Cs[a][b] - Ct[a][b]) ** 2 for a in range(d) for b in range(d))
    return fro / (4.0 * d * d)


def rel_err(a: float, b: float, floor: float = 1e-300) -> float:
    return abs(a - b) / max(abs(b), floor)


def random_family(rng: np.random.Generator, b: int) -> KernelFamily:
    w = rng.random(b) + 0.05
    return KernelFamily(tuple(rng.uniform(0.3, 3.0, b)), tuple(w / w.sum()))


def random_stat_instance(rng: np.random.Generator, max_n: int = 16, max_d: int = 8, max_b: int = 5):
    d = int(rng.integers(1, max_d + 1))
    Xs = rng.standard_normal((int(rng.integers(2, max_n + 1)), d))
    Xt = rng.standard_normal((int(rng.integers(2, max_n + 1)), d)) * rng.uniform(0.5, 2.0) + rng.normal(
        0, 0.5, d
    )
    fam = random_family(rng, int(rng.integers(1, max_b + 1)))
    return Xs, Xt, fam


# ------------------------------------------------------ gradient checking


def kink_margin(params: network.ModelParams, clouds) -> float:
    """Distance of the current point from the nearest non-differentiable switch.

    Smallest absolute ReLU pre-activation (encoder and head) and smallest gap
    between the top two candidates of any max-pooling channel.
    """
    margin = np.inf
    for batch in clouds:
        h = batch
        hidden = []
        for i in range(len(params.encoder_widths)):
            z = h @ params.tensors[f"enc{i}.W"] + params.tensors[f"enc{i}.b"]
            margin = min(margin, np.abs(z).min())
            h = np.maximum(z, 0.0)
        if len(h) > 1:
            top2 = np.sort(h, axis=0)[-2:]
            gap = top2[1] - top2[0]
            # channels where both leaders are clamped at zero carry no gradient
            live = top2[1] > 0
            if live.any():
                margin = min(margin, gap[live].min())
        hidden.append(h.max(axis=0))
    g = np.array(hidden)
    for i in range(len(params.head_widths)):
        z = g @ params.tensors[f"fc{i + 1}.W"] + params.tensors[f"fc{i + 1}.b"]
        margin = min(margin, np.abs(z).min())
        g = np.maximum(z, 0.0)
    return float(margin)


@dataclass
class GradCheckInstance:
    params: network.ModelParams
    source: list
    labels: np.ndarray
    target: list
    weights: network.LossWeights
    family: KernelFamily


def random_gradcheck_instance(seed: int, margin: float = 1e-3, max_tries: int = 200):
    """Shrunken network (widths <= 8, batches <= 4) away from any kink.

    Draws are repeated from the seed's stream until every ReLU input and
    max-pool gap exceeds ``margin``; finite differences are meaningless across
    a switch.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        k = int(rng.integers(2, 5))
        enc = tuple(int(w) for w in rng.integers(2, 9, 5))
        head = tuple(int(w) for w in rng.integers(2, 9, 2))
        params = network.init_params(k, int(rng.integers(2**31)), enc, head)
        for name in params.tensors:
            params.tensors[name] = params.tensors[name] + 0.1 * rng.standard_normal(
                params.tensors[name].shape
            )
        ns, nt = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        source = [rng.standard_normal((int(rng.integers(1, 7)), 3)) for _ in range(ns)]
        target = [rng.standard_normal((int(rng.integers(1, 7)), 3)) for _ in range(nt)]
        if kink_margin(params, source + target) < margin:
            continue
        labels = rng.integers(0, k, ns)
        weights = network.LossWeights(*rng.uniform(0.1, 2.0, 3))
        family = random_family(rng, int(rng.integers(1, 6)))
        return GradCheckInstance(params, source, labels, target, weights, family)
    raise RuntimeError(f"no kink-free instance for seed {seed}")


def finite_difference_check(inst: GradCheckInstance, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - fd| / max(|a|, |fd|, floor)``; the floor keeps
    exactly-zero and round-off-sized gradients from dividing by ~0.
    """

    def f(p):
        terms, _ = network.adaptation_loss_and_grad(
            p, inst.source, inst.labels, inst.target, inst.weights, inst.family
        )
        return terms.total

    _, grads = network.adaptation_loss_and_grad(
        inst.params, inst.source, inst.labels, inst.target, inst.weights, inst.family
    )
    worst = 0.0
    probe = inst.params.copy()
    for name, t in inst.params.tensors.items():
        for idx in np.ndindex(t.shape):
            orig = probe.tensors[name][idx]
            probe.tensors[name][idx] = orig + h
            fp = f(probe)
            probe.tensors[name][idx] = orig - h
            fm = f(probe)
            probe.tensors[name][idx] = orig
            fd = (fp - fm) / (2.0 * h)
            a = grads[name][idx]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), floor))
    return worst


# ------------------------------------------------------------ self-check


@dataclass
class CheckRecord:
    property: str
    passed: bool
    max_error: float
    tolerance: float
    trials: int
    seconds: float

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.max_error = float(self.max_error)

    def as_dict(self):
        return asdict(self)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def check_mmd_oracle(trials: int = 200, seed: int = 0, tol: float = 1e-10) -> CheckRecord:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            Xs, Xt, fam = random_stat_instance(rng)
            got = discrepancy.mk_mmd2(Xs, Xt, fam)
            ref = mmd2_bruteforce(Xs, Xt, fam.bandwidths, fam.weights)
            worst = max(worst, rel_err(got, ref))
        return worst

    worst, dt = _timed(run)
    return CheckRecord("mmd_oracle", worst <= tol, worst, tol, trials, dt)


def check_coral_oracle(trials: int = 200, seed: int = 1, tol: float = 1e-10) -> CheckRecord:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            Xs, Xt, _ = random_stat_instance(rng)
            worst = max(worst, rel_err(discrepancy.coral(Xs, Xt), coral_bruteforce(Xs, Xt)))
        return worst

    worst, dt = _timed(run)
    return CheckRecord("coral_oracle", worst <= tol, worst, tol, trials, dt)


def check_gram_psd(trials: int = 100, seed: int = 2, tol: float = 1e-8) -> CheckRecord:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            n, d = int(rng.integers(1, 11)), int(rng.integers(1, 9))
            X = rng.standard_normal((n, d))
            K = discrepancy.gaussian_gram(X, X, float(rng.uniform(0.2, 3.0)))
            worst = max(worst, -float(np.linalg.eigvalsh(K).min()))
        return worst

    worst, dt = _timed(run)
    # max_error is the most negative eigenvalue, sign-flipped
    return CheckRecord("gram_psd", worst <= tol, max(worst, 0.0), tol, trials, dt)


def check_gradients(seeds: int = 20, tol: float = 1e-4) -> CheckRecord:
    def run():
        return max(finite_difference_check(random_gradcheck_instance(s)) for s in range(seeds))

    worst, dt = _timed(run)
    return CheckRecord("gradient_fd", worst < tol, worst, tol, seeds, dt)


def check_permutation_invariance(trials: int = 100, seed: int = 3) -> CheckRecord:
    def run():
        rng = np.random.default_rng(seed)
        params = network.init_params(4, seed, (8, 8, 8, 16, 32), (16, 8))
        worst = 0.0
        for _ in range(trials):
            cloud = rng.standard_normal((int(rng.integers(1, 64)), 3))
            perm = cloud[rng.permutation(len(cloud))]
            a = network.encoder_forward([cloud], params)
            b = network.encoder_forward([perm], params)
            worst = max(worst, float(np.abs(a - b).max()))
        return worst

    worst, dt = _timed(run)
    return CheckRecord("permutation_invariance", worst == 0.0, worst, 0.0, trials, dt)


def oracle_check() -> list[CheckRecord]:
    return [
        check_mmd_oracle(),
        check_coral_oracle(),
        check_gram_psd(),
        check_gradients(),
        check_permutation_invariance(),
    ]
