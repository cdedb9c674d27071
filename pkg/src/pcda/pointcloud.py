"""Meshes, surface sampling, preprocessing and dataset splits."""
from __future__ import annotations

import io
import os
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadIndex,
    CountMismatch,
    DataError,
    DegenerateMesh,
    EmptyRoster,
    MalformedHeader,
    TooManyRequested,
)


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64, triangles only
    class_label: int | str | None = None
    object_id: str = ""

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float64
    label: int | None = None
    object_id: str = ""
    seed: int | None = None

    @property
    def n(self) -> int:
        return len(self.points)

    def replace(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.label, self.object_id, self.seed)


@dataclass
class DatasetSplit:
    source_labelled: list[tuple[str, int]]
    target_unlabelled: list[str]
    test: list[tuple[str, int]]
    seed: int = 0


# --------------------------------------------------------------------- OFF

_HEADER_RE = re.compile(r"^OFF(?=\s|$|\d)")


def _content_lines(text: str) -> list[str]:
    out = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def parse_off(source, class_label=None, object_id: str = "") -> Mesh:
    """Parse an OFF mesh from a string or text stream.

    Faces with more than three vertices are fan-triangulated around their
    first vertex. A header fused with the counts line (``OFF490 518 0``, a
    known ModelNet10 defect) is accepted.
    """
    text = source if isinstance(source, str) else source.read()
    lines = _content_lines(text)
    if not lines or not _HEADER_RE.match(lines[0]):
        first = lines[0].split()[0] if lines else ""
        raise MalformedHeader(f"expected 'OFF' header, got {first!r}")
    rest = lines[0][3:].strip()
    body = lines[1:]
    if not rest:
        if not body:
            raise CountMismatch("missing counts line")
        rest, body = body[0], body[1:]
    try:
        counts = [int(t) for t in rest.split()]
        n_vert, n_face = counts[0], counts[1]
    except (ValueError, IndexError):
        raise MalformedHeader(f"bad counts line {rest!r}") from None

    if len(body) != n_vert + n_face:
        raise CountMismatch(
            f"declared {n_vert} vertices + {n_face} faces, found {len(body)} data lines"
        )
    try:
        vertices = np.array(
            [[float(t) for t in ln.split()[:3]] for ln in body[:n_vert]], dtype=np.float64
        ).reshape(n_vert, 3)
    except ValueError as exc:
        raise CountMismatch(f"bad vertex line: {exc}") from None

    tris = []
    for ln in body[n_vert:]:
        toks = ln.split()
        k = int(toks[0])
        if len(toks) < k + 1 or k < 3:
            raise CountMismatch(f"face line {ln!r} declares {k} indices")
        idx = [int(t) for t in toks[1 : k + 1]]
        for i in idx:
            if i < 0 or i >= n_vert:
                raise BadIndex(f"face index {i} out of range for {n_vert} vertices")
        for j in range(1, k - 1):
            tris.append((idx[0], idx[j], idx[j + 1]))
    faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return Mesh(vertices, faces, class_label, object_id)


def load_off(path, class_label=None, object_id: str | None = None) -> Mesh:
    path = Path(path)
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        return parse_off(fh, class_label, object_id if object_id is not None else path.stem)


def format_off(mesh: Mesh) -> str:
    buf = io.StringIO()
    buf.write(f"OFF\n{len(mesh.vertices)} {len(mesh.faces)} 0\n")
    for v in mesh.vertices:
        buf.write(" ".join(repr(float(x)) for x in v) + "\n")
    for f in mesh.faces:
        buf.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    return buf.getvalue()


# ---------------------------------------------------------------- sampling


def sample_surface(mesh: Mesh, n: int, seed: int) -> PointCloud:
    """Draw ``n`` points uniformly over the mesh surface.

    A triangle is picked with probability proportional to its area, then a point
    inside it with uniform barycentric coordinates (reflected square sampling).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    areas = mesh.face_areas() if len(mesh.faces) else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise DegenerateMesh(f"mesh {mesh.object_id!r} has zero surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    f = mesh.faces[tri]
    a, b, c = mesh.vertices[f[:, 0]], mesh.vertices[f[:, 1]], mesh.vertices[f[:, 2]]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    label = mesh.class_label if isinstance(mesh.class_label, (int, np.integer)) else None
    return PointCloud(pts.reshape(n, 3), label, mesh.object_id, seed)


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    pts = cloud.points - cloud.points.mean(axis=0)
    scale = np.sqrt((pts * pts).sum(axis=1)).max()
    # spread at round-off level means the points coincide
    if scale <= 1e-12 * max(1.0, np.abs(cloud.points).max()):
        return cloud.replace(np.zeros_like(pts))
    pts = pts / scale
    return cloud.replace(pts)


def subsample(cloud: PointCloud, m: int, seed: int) -> PointCloud:
    """``m`` points without replacement, in random order."""
    if m > cloud.n:
        raise TooManyRequested(f"requested {m} of {cloud.n} points")
    if m < 1:
        raise ValueError("m must be >= 1")
    idx = np.random.default_rng(seed).permutation(cloud.n)[:m]
    return cloud.replace(cloud.points[idx])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_z(cloud: PointCloud, angle: float) -> PointCloud:
    return cloud.replace(cloud.points @ rotation_z(angle).T)


# ------------------------------------------------------------------ splits


def build_splits(
    roster: Sequence[tuple[str, int]],
    train_fraction: float = 0.8,
    seed: int = 0,
    sizes: tuple[int, int] | None = None,
) -> DatasetSplit:
    """Seeded shuffle, then the leading share becomes the labelled source.

    The target domain reuses the source object ids (unlabelled). ``sizes``
    overrides the fraction with explicit ``(n_source, n_test)`` counts.
    """
    if not roster:
        raise EmptyRoster("roster is empty")
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must lie in (0, 1]")
    order = np.random.default_rng(seed).permutation(len(roster))
    shuffled = [tuple(roster[i]) for i in order]
    if sizes is not None:
        n_src, n_test = sizes
        if n_src + n_test > len(roster) or n_src < 1 or n_test < 0:
            raise DataError(f"split sizes {sizes} do not fit a roster of {len(roster)}")
        source, test = shuffled[:n_src], shuffled[n_src : n_src + n_test]
    else:
        n_src = int(np.floor(train_fraction * len(roster)))
        source, test = shuffled[:n_src], shuffled[n_src:]
    return DatasetSplit(source, [oid for oid, _ in source], test, seed)


# --------------------------------------------------------------- ModelNet


def discover_modelnet(root) -> tuple[list[str], list[tuple[str, int, Path]]]:
    """Scan ``<root>/<class>/<split>/<class>_####.off``.

    Returns the lexicographically sorted class names and a roster of
    ``(object_id, label, path)`` with ``object_id = "<class>/<split>/<stem>"``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    roster = []
    for label, cls in enumerate(classes):
        for path in sorted((root / cls).glob("*/*.off")):
            roster.append((f"{cls}/{path.parent.name}/{path.stem}", label, path))
    if not roster:
        raise EmptyRoster(f"no OFF files under {root}")
    return classes, roster


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from ints and strings."""
    words = []
    for p in parts:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode("utf-8")))
        else:
            words.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> 1)


# ------------------------------------------------------------ cloud cache
#
# A cloud set is stored as one ``.npz`` archive (uncompressed, no pickles):
#   <prefix>ids      unicode (N,)     object ids
#   <prefix>labels   int64   (N,)     label, -1 when unlabelled
#   <prefix>counts   int64   (N,)     points per record
#   <prefix>points   float64 (sum counts, 3)  coordinates, records concatenated
# Several sets share one archive under distinct prefixes (e.g. "source/").


def pack_clouds(clouds: Sequence[PointCloud], prefix: str = "") -> dict[str, np.ndarray]:
    ids = np.array([c.object_id for c in clouds], dtype=np.str_)
    labels = np.array([-1 if c.label is None else int(c.label) for c in clouds], dtype=np.int64)
    counts = np.array([c.n for c in clouds], dtype=np.int64)
    pts = (
        np.concatenate([c.points for c in clouds]).astype(np.float64)
        if clouds
        else np.zeros((0, 3))
    )
    return {
        f"{prefix}ids": ids,
        f"{prefix}labels": labels,
        f"{prefix}counts": counts,
        f"{prefix}points": pts,
    }


def unpack_clouds(arrays, prefix: str = "") -> list[PointCloud]:
    ids = arrays[f"{prefix}ids"]
    labels = arrays[f"{prefix}labels"]
    counts = arrays[f"{prefix}counts"]
    pts = arrays[f"{prefix}points"]
    out, start = [], 0
    for oid, lab, n in zip(ids, labels, counts):
        out.append(PointCloud(pts[start : start + n].copy(), None if lab < 0 else int(lab), str(oid)))
        start += int(n)
    return out


def atomic_savez(path, arrays: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def save_clouds(path, clouds: Sequence[PointCloud]) -> None:
    atomic_savez(path, pack_clouds(clouds))


def load_clouds(path) -> list[PointCloud]:
    with np.load(path, allow_pickle=False) as z:
        return unpack_clouds(z)


def concat_points(clouds: Iterable[PointCloud]) -> tuple[np.ndarray, np.ndarray]:
    """Stack clouds into one point table plus segment offsets (len B+1)."""
    clouds = list(clouds)
    counts = np.array([c.n for c in clouds], dtype=np.int64)
    offsets = np.zeros(len(clouds) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return np.concatenate([c.points for c in clouds]), offsets
