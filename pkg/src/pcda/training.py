"""Supervised pretraining on dense clouds and head-only adaptation to sparse clouds."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import network
from .discrepancy import default_family, median_bandwidth
from .errors import BatchTooLarge, BatchTooSmall, EmptyDataset
from .network import AdamState, LossWeights, ModelParams
from .pointcloud import PointCloud, derive_seed, rotation_z

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs_pretrain: int = 150
    epochs_adapt: int = 50
    batch_size: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    kernel_count: int = 5
    kernel_multiplier: float = 2.0
    seed: int = 0
    lr: float = 1e-3
    adapt_lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs_pretrain < 0 or self.epochs_adapt < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)


def batch_iterator(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch; a trailing batch with fewer than 2 rows is dropped."""
    if batch_size > n:
        raise BatchTooLarge(f"batch size {batch_size} exceeds dataset size {n}")
    order = np.random.default_rng(derive_seed(seed, "batches", epoch)).permutation(n)
    batches = [order[s : s + batch_size] for s in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def cycling_batches(n: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Endless batches; reshuffles with a new epoch index whenever exhausted."""
    epoch = 0
    while True:
        yield from batch_iterator(n, batch_size, seed, epoch)
        epoch += 1


def _augmented(clouds: Sequence[PointCloud], idx: np.ndarray, angles: np.ndarray | None):
    if angles is None:
        return [clouds[i].points for i in idx]
    return [clouds[i].points @ rotation_z(angles[i]).T for i in idx]


def _angles(n: int, seed: int, tag: str, epoch: int, augment: bool):
    if not augment:
        return None
    return np.random.default_rng(derive_seed(seed, tag, epoch)).uniform(0.0, 2 * np.pi, n)


def _labels(clouds: Sequence[PointCloud]) -> np.ndarray:
    if any(c.label is None for c in clouds):
        raise EmptyDataset("source clouds must all carry labels")
    return np.array([c.label for c in clouds], dtype=np.int64)


def _adam(config: TrainConfig, lr: float) -> AdamState:
    return AdamState(lr=lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)


def pretrain(
    source: Sequence[PointCloud],
    config: TrainConfig,
    params: ModelParams | None = None,
    num_classes: int | None = None,
    encoder_widths=network.ENCODER_WIDTHS,
    head_widths=network.HEAD_WIDTHS,
) -> TrainResult:
    """Minimize cross-entropy on labelled dense clouds with per-sample z-rotations."""
    if not source:
        raise EmptyDataset("no labelled source clouds")
    y = _labels(source)
    if params is None:
        k = num_classes if num_classes is not None else int(y.max()) + 1
        params = network.init_params(
            k, derive_seed(config.seed, "init"), encoder_widths, head_widths
        )
    else:
        params = params.copy()
    state = _adam(config, config.lr)
    result = TrainResult(params, state)
    bs = min(config.batch_size, len(source))
    for epoch in range(config.epochs_pretrain):
        angles = _angles(len(source), config.seed, "rot-pretrain", epoch, config.augment)
        losses, correct, seen = [], 0, 0
        for idx in batch_iterator(len(source), bs, config.seed, epoch):
            loss, grads, logits = network.supervised_loss_and_grad(
                params, _augmented(source, idx, angles), y[idx]
            )
            network.optimizer_step(params, grads, state)
            losses.append(loss)
            correct += int((np.argmax(logits, axis=1) == y[idx]).sum())
            seen += len(idx)
            result.steps.append({"epoch": epoch, "split": "pretrain", "loss": loss, "ce": loss})
        rec = {
            "epoch": epoch,
            "split": "pretrain",
            "loss": float(np.mean(losses)),
            "ce": float(np.mean(losses)),
            "accuracy": correct / seen,
        }
        result.epochs.append(rec)
        log.info("pretrain epoch %d loss %.4f acc %.3f", epoch, rec["loss"], rec["accuracy"])
    return result


def median_family(config: TrainConfig):
    """Per-batch kernel family centred on the median heuristic bandwidth."""

    def make(fs: np.ndarray, ft: np.ndarray):
        return default_family(median_bandwidth(fs, ft), config.kernel_count, config.kernel_multiplier)

    return make


TERMS = ("ce", "mmd_fc1", "mmd_fc2", "coral_fc1", "coral_fc2")


def adapt(
    params: ModelParams,
    source: Sequence[PointCloud],
    target: Sequence[PointCloud],
    config: TrainConfig,
    family=None,
) -> TrainResult:
    """Freeze the encoder and train the head on the combined loss.

    Every step pairs a labelled source batch with an unlabelled target batch;
    the target stream recycles (reshuffled) when it runs out.
    """
    if not source or not target:
        raise EmptyDataset("adaptation needs non-empty source and target sets")
    y = _labels(source)
    params = params.copy()
    params.freeze_encoder()
    if family is None:
        family = median_family(config)
    state = _adam(config, config.adapt_lr if config.adapt_lr is not None else config.lr)
    result = TrainResult(params, state)
    bs = min(config.batch_size, len(source))
    tbs = min(bs, len(target))
    if tbs < 2:
        raise BatchTooSmall("target set needs at least 2 clouds")
    tstream = cycling_batches(len(target), tbs, derive_seed(config.seed, "target"))
    for epoch in range(config.epochs_adapt):
        s_angles = _angles(len(source), config.seed, "rot-adapt-src", epoch, config.augment)
        t_angles = _angles(len(target), config.seed, "rot-adapt-tgt", epoch, config.augment)
        sums = dict.fromkeys(("loss",) + TERMS, 0.0)
        n_steps, correct, seen = 0, 0, 0
        for idx in batch_iterator(len(source), bs, config.seed, epoch):
            tidx = next(tstream)
            terms, grads, logits = network.adaptation_loss_and_grad(
                params,
                _augmented(source, idx, s_angles),
                y[idx],
                _augmented(target, tidx, t_angles),
                config.weights,
                family,
                return_logits=True,
            )
            network.optimizer_step(params, grads, state)
            rec = {"epoch": epoch, "split": "adapt", "loss": terms.total}
            rec.update({k: getattr(terms, k) for k in TERMS})
            result.steps.append(rec)
            sums["loss"] += terms.total
            for k in TERMS:
                sums[k] += getattr(terms, k)
            n_steps += 1
            correct += int((np.argmax(logits, axis=1) == y[idx]).sum())
            seen += len(idx)
        rec = {"epoch": epoch, "split": "adapt"}
        rec.update({k: v / n_steps for k, v in sums.items()})
        rec["accuracy"] = correct / seen
        result.epochs.append(rec)
        log.info("adapt epoch %d loss %.4f", epoch, rec["loss"])
    return result


LOG_HEADER = ("epoch", "split", "loss") + TERMS + ("accuracy",)


def write_log(path, epochs: Sequence[dict], append: bool = False) -> None:
    """Per-epoch CSV; loss components a stage does not compute are left blank."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_HEADER, restval="")
        if new:
            w.writeheader()
        for rec in epochs:
            w.writerow({k: rec[k] for k in LOG_HEADER if k in rec})
        fh.flush()
        os.fsync(fh.fileno())
