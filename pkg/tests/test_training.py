import csv

import numpy as np
import pytest

from pcda import network as N
from pcda.errors import BatchTooLarge, EmptyDataset
from pcda.pointcloud import PointCloud, derive_seed
from pcda.training import (
    LOG_HEADER,
    TrainConfig,
    adapt,
    batch_iterator,
    cycling_batches,
    pretrain,
    write_log,
)

ENC = (8, 8, 8, 16, 32)
HEAD = (16, 8)


def toy(n_per=8, npts=12, seed=0, offset=1.0):
    """Two classes: clusters around (+offset,0,0) and (-offset,0,0)."""
    rng = np.random.default_rng(seed)
    out = []
    for label, sign in ((0, 1.0), (1, -1.0)):
        for i in range(n_per):
            pts = rng.normal(0, 0.1, (npts, 3)) + [sign * offset, 0, 0]
            out.append(PointCloud(pts, label, f"c{label}/{i}"))
    return out


def sparse(clouds, m=4):
    return [PointCloud(c.points[:m].copy(), None, c.object_id) for c in clouds]


def cfg(**kw):
    base = dict(epochs_pretrain=3, epochs_adapt=2, batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# --------------------------------------------------------------- batching


def test_batch_iterator_ten_by_three():
    batches = batch_iterator(10, 3, seed=0, epoch=0)
    assert [len(b) for b in batches] == [3, 3, 3]
    assert len(set(np.concatenate(batches))) == 9


def test_batch_iterator_keeps_pairs_and_covers():
    batches = batch_iterator(11, 3, seed=0, epoch=0)
    assert [len(b) for b in batches] == [3, 3, 3, 2]
    assert sorted(np.concatenate(batches)) == list(range(11))


def test_batch_iterator_determinism_and_epochs():
    a = batch_iterator(20, 4, 5, 0)
    b = batch_iterator(20, 4, 5, 0)
    c = batch_iterator(20, 4, 5, 1)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_batch_too_large():
    with pytest.raises(BatchTooLarge):
        batch_iterator(3, 4, 0, 0)


def test_target_stream_recycles():
    stream = cycling_batches(3, 3, seed=1)
    seen = [sorted(next(stream)) for _ in range(5)]
    assert all(s == [0, 1, 2] for s in seen)
    stream = cycling_batches(7, 2, seed=1)
    first = np.concatenate([next(stream) for _ in range(3)])
    assert len(set(first)) == 6


# -------------------------------------------------------------- pretrain


def test_zero_epochs_returns_initialization():
    res = pretrain(toy(), cfg(epochs_pretrain=0), encoder_widths=ENC, head_widths=HEAD)
    ref = N.init_params(2, derive_seed(0, "init"), ENC, HEAD)
    for k in ref.names:
        assert res.params.tensors[k].tobytes() == ref.tensors[k].tobytes()
    assert res.epochs == [] and res.state.t == 0


def test_pretrain_separable_toy_reaches_full_accuracy():
    data = toy(n_per=10)
    res = pretrain(data, cfg(epochs_pretrain=50, augment=False), encoder_widths=ENC, head_widths=HEAD)
    pred = N.predict([c.points for c in data], res.params)
    assert (pred == [c.label for c in data]).mean() == 1.0
    assert res.epochs[-1]["loss"] < res.epochs[0]["loss"]


def test_pretrain_deterministic(tmp_path):
    paths = []
    for i in range(2):
        res = pretrain(toy(), cfg(), encoder_widths=ENC, head_widths=HEAD)
        p = tmp_path / f"run{i}.npz"
        N.save_checkpoint(p, res.params, res.state, {"seed": "0"})
        paths.append(p)
    a, b = (N.load_checkpoint(p)[0] for p in paths)
    for k in a.names:
        assert a.tensors[k].tobytes() == b.tensors[k].tobytes()


def test_pretrain_needs_labels():
    with pytest.raises(EmptyDataset):
        pretrain(sparse(toy()), cfg(), encoder_widths=ENC, head_widths=HEAD)
    with pytest.raises(EmptyDataset):
        pretrain([], cfg())


# ----------------------------------------------------------------- adapt


@pytest.fixture(scope="module")
def pretrained():
    return pretrain(toy(), cfg(epochs_pretrain=5), encoder_widths=ENC, head_widths=HEAD).params


def test_adapt_freezes_encoder(pretrained):
    res = adapt(pretrained, toy(), sparse(toy(seed=1)), cfg())
    for k in pretrained.encoder_names:
        assert res.params.tensors[k].tobytes() == pretrained.tensors[k].tobytes()
    assert any(not np.array_equal(res.params.tensors[k], pretrained.tensors[k]) for k in pretrained.head_names)
    # input params are not mutated
    assert not pretrained.frozen


def test_adapt_without_discrepancy_is_source_only(pretrained):
    w = N.LossWeights(10.0, 0.0, 0.0)
    a = adapt(pretrained, toy(), sparse(toy(seed=1)), cfg(weights=w))
    b = adapt(pretrained, toy(), sparse(toy(seed=7), m=6), cfg(weights=w))
    for k in pretrained.names:
        assert a.params.tensors[k].tobytes() == b.params.tensors[k].tobytes()


def test_adapt_log_components_recompose(pretrained, tmp_path):
    w = N.LossWeights(10.0, 0.5, 0.5)
    res = adapt(pretrained, toy(), sparse(toy(seed=1)), cfg(weights=w))
    for rec in res.steps + res.epochs:
        recomposed = w.alpha * rec["ce"] + w.beta * (rec["mmd_fc1"] + rec["mmd_fc2"]) + w.lam * (
            rec["coral_fc1"] + rec["coral_fc2"]
        )
        assert abs(rec["loss"] - recomposed) < 1e-10
    log = tmp_path / "adapt.csv"
    write_log(log, res.epochs)
    rows = list(csv.DictReader(open(log)))
    assert tuple(rows[0].keys()) == LOG_HEADER and len(rows) == 2
    assert float(rows[-1]["loss"]) == res.epochs[-1]["loss"]


def test_adapt_identical_domains_zero_discrepancy(pretrained):
    data = toy()
    res = adapt(pretrained, data, [c.replace(c.points) for c in data],
                cfg(batch_size=len(data), augment=False, epochs_adapt=1))
    step = res.steps[0]
    for k in ("mmd_fc1", "mmd_fc2", "coral_fc1", "coral_fc2"):
        assert abs(step[k]) < 1e-10


def test_pretrain_log_blanks(tmp_path):
    res = pretrain(toy(), cfg(epochs_pretrain=1), encoder_widths=ENC, head_widths=HEAD)
    write_log(tmp_path / "p.csv", res.epochs)
    row = next(csv.DictReader(open(tmp_path / "p.csv")))
    assert row["mmd_fc1"] == "" and row["split"] == "pretrain"
