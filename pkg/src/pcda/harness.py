"""Dataset preparation, evaluation, sweeps and result files."""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import network, shapes
from .errors import DataError, EmptyDataset, TooManyRequested
from .network import LossWeights, ModelParams
from .pointcloud import (
    PointCloud,
    atomic_savez,
    build_splits,
    derive_seed,
    discover_modelnet,
    load_off,
    normalize_unit_sphere,
    pack_clouds,
    sample_surface,
    subsample,
    unpack_clouds,
)
from .training import TrainConfig, adapt

CANONICAL_COUNTS = (1024, 512, 256, 128, 64, 50, 40, 30, 20, 10)

# Reference accuracies on ModelNet10 (cited, not regenerated here).
CITED_BASELINES = {
    "PointNet": {1024: 0.9232, 50: 0.8103, 40: 0.7686, 30: 0.6809, 20: 0.5855, 10: 0.3289},
    "TriangleNet": {1024: 0.8136, 50: 0.6445, 40: 0.5989, 30: 0.4797, 20: 0.3379, 10: 0.1106},
    "DGCNN": {1024: 0.9327, 50: 0.0369, 40: 0.0312, 30: 0.0203, 20: 0.0089},
}
REPORTED_ADAPTED = {1024: 0.9112, 50: 0.8235, 40: 0.8169, 30: 0.7489, 20: 0.6558, 10: 0.4118}

RESULT_HEADER = ("points", "accuracy", "variant", "alpha", "beta", "lambda", "seed")


# ------------------------------------------------------------------ data


@dataclass
class PreparedData:
    source: list[PointCloud]  # dense, labelled
    target: list[PointCloud]  # sparse, unlabelled
    test: list[PointCloud]  # dense, labelled; subsampled at evaluation time
    classes: list[str]
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        arrays = {}
        for name in ("source", "target", "test"):
            arrays.update(pack_clouds(getattr(self, name), f"{name}/"))
        arrays["classes"] = np.array(self.classes, dtype=np.str_)
        arrays["meta"] = np.array(json.dumps(self.meta, sort_keys=True))
        atomic_savez(path, arrays)

    @classmethod
    def load(cls, path) -> "PreparedData":
        with np.load(path, allow_pickle=False) as z:
            return cls(
                unpack_clouds(z, "source/"),
                unpack_clouds(z, "target/"),
                unpack_clouds(z, "test/"),
                [str(c) for c in z["classes"]],
                json.loads(str(z["meta"])),
            )


def _clouds_for(mesh, oid: str, label: int, dense_n: int, sparse_n: int, seed: int):
    def fresh(tag):
        c = normalize_unit_sphere(sample_surface(mesh, dense_n, derive_seed(seed, oid, tag)))
        c.label, c.object_id = label, oid
        return c

    return fresh


def prepare(
    meshes_by_id: dict,
    roster: Sequence[tuple[str, int]],
    classes: Sequence[str],
    dense_n: int = 1024,
    sparse_n: int = 50,
    fraction: float = 0.8,
    seed: int = 0,
    sizes: tuple[int, int] | None = None,
    meta: dict | None = None,
) -> PreparedData:
    """Split the roster and sample the three cloud sets.

    ``meshes_by_id`` maps object id to a Mesh or to a zero-argument loader.
    Source and test clouds are fresh dense surface samples; each target cloud
    is a ``sparse_n`` subsample of an independent dense sample of a source
    object, stored without its label.
    """
    split = build_splits(list(roster), fraction, seed, sizes)
    source, target, test = [], [], []

    def mesh_of(oid):
        m = meshes_by_id[oid]
        return m() if callable(m) else m

    for oid, label in split.source_labelled:
        fresh = _clouds_for(mesh_of(oid), oid, label, dense_n, sparse_n, seed)
        source.append(fresh("dense"))
        sparse = subsample(fresh("sparse"), sparse_n, derive_seed(seed, oid, "subsample"))
        sparse.label = None
        target.append(sparse)
    for oid, label in split.test:
        test.append(_clouds_for(mesh_of(oid), oid, label, dense_n, sparse_n, seed)("test"))
    info = {"dense_points": dense_n, "sparse_points": sparse_n, "fraction": fraction, "seed": seed}
    info.update(meta or {})
    return PreparedData(source, target, test, list(classes), info)


def prepare_synthetic(
    classes=("sphere", "box", "cylinder"),
    per_class: int = 60,
    dense_n: int = 256,
    sparse_n: int = 32,
    fraction: float = 0.8,
    seed: int = 0,
    jitter: float = 0.5,
    sizes=None,
) -> PreparedData:
    meshes = shapes.synthetic_roster(classes, per_class, seed, jitter)
    by_id = {m.object_id: m for m in meshes}
    roster = [(m.object_id, int(m.class_label)) for m in meshes]
    meta = {"source": "synthetic", "per_class": per_class, "jitter": jitter}
    return prepare(by_id, roster, classes, dense_n, sparse_n, fraction, seed, sizes, meta)


def prepare_modelnet(
    root, dense_n: int = 1024, sparse_n: int = 50, fraction: float = 0.8, seed: int = 0, sizes=None
) -> PreparedData:
    classes, roster = discover_modelnet(root)
    loaders = {oid: (lambda p=path, l=label, o=oid: load_off(p, l, o)) for oid, label, path in roster}
    meta = {"source": "modelnet", "root": str(root)}
    return prepare(
        loaders, [(o, l) for o, l, _ in roster], classes, dense_n, sparse_n, fraction, seed, sizes, meta
    )


# ------------------------------------------------------------ evaluation


@dataclass
class AccuracyTable:
    counts: list[int]
    correct: list[int]
    total: int
    metadata: dict = field(default_factory=dict)

    @property
    def accuracies(self) -> list[float]:
        return [c / self.total for c in self.correct]

    def accuracy(self, points: int) -> float:
        return self.correct[self.counts.index(points)] / self.total

    def rows(self) -> list[dict]:
        md = self.metadata
        return [
            {
                "points": m,
                "accuracy": acc,
                "variant": md.get("variant", ""),
                "alpha": md.get("alpha", ""),
                "beta": md.get("beta", ""),
                "lambda": md.get("lambda", ""),
                "seed": md.get("seed", ""),
            }
            for m, acc in zip(self.counts, self.accuracies)
        ]

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "total": self.total,
            "rows": [
                {"points": m, "correct": c, "accuracy": c / self.total}
                for m, c in zip(self.counts, self.correct)
            ],
        }


def evaluate(
    params: ModelParams,
    test: Sequence[PointCloud],
    point_counts: Sequence[int] = CANONICAL_COUNTS,
    seed: int = 0,
    metadata: dict | None = None,
) -> AccuracyTable:
    """Accuracy at each point count on seeded subsamples of every test cloud.

    The subsample seed depends only on (seed, object id, count), so every model
    sees the same sparse clouds regardless of test-set order.
    """
    if not test:
        raise EmptyDataset("empty test set")
    counts = sorted({int(m) for m in point_counts}, reverse=True)
    labels = np.array([c.label for c in test], dtype=np.int64)
    smallest = min(c.n for c in test)
    if counts[0] > smallest:
        raise TooManyRequested(f"{counts[0]} points requested; smallest test cloud has {smallest}")
    correct = []
    for m in counts:
        clouds = [subsample(c, m, derive_seed(seed, c.object_id, m)) for c in test]
        correct.append(int((network.predict(clouds, params) == labels).sum()))
    md = {"seed": seed}
    md.update(metadata or {})
    return AccuracyTable(counts, correct, len(test), md)


def available_counts(test: Sequence[PointCloud], counts=CANONICAL_COUNTS) -> list[int]:
    smallest = min(c.n for c in test)
    return [m for m in counts if m <= smallest]


# ---------------------------------------------------------------- sweeps

LOSS_VARIANTS = ("coral", "mmd", "ours")


def cell_config(base: TrainConfig, axis: str, value) -> tuple[TrainConfig, str]:
    w = base.weights
    if axis == "alpha":
        return replace(base, weights=replace(w, alpha=float(value))), f"alpha={value}"
    if axis == "beta":
        return replace(base, weights=replace(w, beta=float(value))), f"beta={value}"
    if axis == "lambda":
        return replace(base, weights=replace(w, lam=float(value))), f"lambda={value}"
    if axis == "loss_variant":
        if value == "coral":
            return replace(base, weights=replace(w, beta=0.0)), "coral"
        if value == "mmd":
            return replace(base, weights=replace(w, lam=0.0)), "mmd"
        if value == "ours":
            return base, "ours"
        raise ValueError(f"unknown loss variant {value!r}; expected one of {LOSS_VARIANTS}")
    raise ValueError(f"unknown sweep axis {axis!r}")


def run_cell(
    axis: str,
    value,
    base: TrainConfig,
    pretrained: ModelParams,
    data: PreparedData,
    point_counts: Sequence[int],
    eval_seed: int | None = None,
) -> tuple[AccuracyTable, ModelParams]:
    cfg, label = cell_config(base, axis, value)
    result = adapt(pretrained, data.source, data.target, cfg)
    w = cfg.weights
    md = {"variant": label, "alpha": w.alpha, "beta": w.beta, "lambda": w.lam}
    seed = cfg.seed if eval_seed is None else eval_seed
    return evaluate(result.params, data.test, point_counts, seed, md), result.params


def _cell_job(args):
    return run_cell(*args)[0]


def sweep(
    axis: str,
    values: Sequence,
    base: TrainConfig,
    pretrained: ModelParams,
    data: PreparedData,
    point_counts: Sequence[int],
    jobs: int = 1,
) -> list[AccuracyTable]:
    """One adaptation + evaluation per value, everything else held fixed."""
    if not values:
        raise ValueError("sweep needs at least one value")
    for v in values:
        cell_config(base, axis, v)  # validate before spending compute
    args = [(axis, v, base, pretrained, data, point_counts) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_cell_job, args))
    return [_cell_job(a) for a in args]


def grid(tables: Sequence[AccuracyTable]) -> tuple[list[str], list[list]]:
    """Rows = point counts, columns = sweep cells."""
    header = ["points"] + [t.metadata.get("variant", str(i)) for i, t in enumerate(tables)]
    counts = tables[0].counts
    body = [[m] + [t.accuracy(m) for t in tables] for m in counts]
    return header, body


# --------------------------------------------------------------- results


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def results_csv(tables: Sequence[AccuracyTable]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_HEADER, lineterminator="\n")
    w.writeheader()
    for t in tables:
        for row in t.rows():
            w.writerow({**row, "accuracy": repr(row["accuracy"])})
    return buf.getvalue()


def results_json(tables: Sequence[AccuracyTable]) -> str:
    return json.dumps({"tables": [t.to_json() for t in tables]}, indent=2, sort_keys=True)


def grid_csv(tables: Sequence[AccuracyTable]) -> str:
    header, body = grid(tables)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in body:
        w.writerow([row[0]] + [f"{x:.4f}" for x in row[1:]])
    return buf.getvalue()


def write_results(out_dir, tables: Sequence[AccuracyTable], stem: str = "results") -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "csv": out_dir / f"{stem}.csv",
        "json": out_dir / f"{stem}.json",
        "grid": out_dir / f"{stem}_grid.csv",
    }
    _atomic_write_text(paths["csv"], results_csv(tables))
    _atomic_write_text(paths["json"], results_json(tables))
    _atomic_write_text(paths["grid"], grid_csv(tables))
    return paths


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config

DEFAULTS = {
    "dataset.root": "",
    "dataset.synthetic": "sphere,box,cylinder",
    "dataset.per_class": "60",
    "dataset.jitter": "0.5",
    "dataset.dense_points": "1024",
    "dataset.sparse_points": "50",
    "split.fraction": "0.8",
    "split.source_size": "",
    "split.test_size": "",
    "net.encoder_widths": "64,64,64,128,1024",
    "net.head_widths": "512,256",
    "train.epochs": "150",
    "train.batch_size": "32",
    "train.lr": "0.001",
    "train.augment": "true",
    "adapt.epochs": "50",
    "adapt.lr": "",
    "loss.alpha": "10",
    "loss.beta": "0.5",
    "loss.lambda": "0.5",
    "kernel.count": "5",
    "kernel.multiplier": "2",
    "eval.points": ",".join(map(str, CANONICAL_COUNTS)),
    "seed": "0",
}

DATASET_ROOT_ENV = "PCDA_DATASET_ROOT"


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = val
    return out


def load_config(path=None, overrides: Sequence[str] = ()) -> dict[str, str]:
    """Defaults <- environment <- config file <- ``key=value`` overrides."""
    cfg = dict(DEFAULTS)
    if os.environ.get(DATASET_ROOT_ENV):
        cfg["dataset.root"] = os.environ[DATASET_ROOT_ENV]
    if path:
        cfg.update(parse_config_text(Path(path).read_text()))
    if overrides:
        cfg.update(parse_config_text("\n".join(overrides)))
    return cfg


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes", "on")


def train_config(cfg: dict[str, str]) -> TrainConfig:
    return TrainConfig(
        epochs_pretrain=int(cfg["train.epochs"]),
        epochs_adapt=int(cfg["adapt.epochs"]),
        batch_size=int(cfg["train.batch_size"]),
        weights=LossWeights(
            float(cfg["loss.alpha"]), float(cfg["loss.beta"]), float(cfg["loss.lambda"])
        ),
        kernel_count=int(cfg["kernel.count"]),
        kernel_multiplier=float(cfg["kernel.multiplier"]),
        seed=int(cfg["seed"]),
        lr=float(cfg["train.lr"]),
        adapt_lr=float(cfg["adapt.lr"]) if cfg["adapt.lr"] else None,
        augment=_bool(cfg["train.augment"]),
    )


def network_widths(cfg: dict[str, str]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return _ints(cfg["net.encoder_widths"]), _ints(cfg["net.head_widths"])


def eval_counts(cfg: dict[str, str]) -> list[int]:
    return list(_ints(cfg["eval.points"]))


def prepare_from_config(cfg: dict[str, str]) -> PreparedData:
    sizes = None
    if cfg["split.source_size"] or cfg["split.test_size"]:
        if not (cfg["split.source_size"] and cfg["split.test_size"]):
            raise DataError("split.source_size and split.test_size must be given together")
        sizes = (int(cfg["split.source_size"]), int(cfg["split.test_size"]))
    common = dict(
        dense_n=int(cfg["dataset.dense_points"]),
        sparse_n=int(cfg["dataset.sparse_points"]),
        fraction=float(cfg["split.fraction"]),
        seed=int(cfg["seed"]),
        sizes=sizes,
    )
    if cfg["dataset.root"]:
        return prepare_modelnet(cfg["dataset.root"], **common)
    classes = tuple(s.strip() for s in cfg["dataset.synthetic"].split(",") if s.strip())
    return prepare_synthetic(
        classes, int(cfg["dataset.per_class"]), jitter=float(cfg["dataset.jitter"]), **common
    )
