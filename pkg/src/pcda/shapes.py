"""Parametric triangle meshes for dataset-free experiments."""
from __future__ import annotations

import numpy as np

from .pointcloud import Mesh

SHAPES = ("sphere", "box", "cylinder", "cone", "torus", "plane")


def _grid_faces(rows: int, cols: int, wrap_cols: bool) -> list[tuple[int, int, int]]:
    faces = []
    cmax = cols if wrap_cols else cols - 1
    for i in range(rows - 1):
        for j in range(cmax):
            a = i * cols + j
            b = i * cols + (j + 1) % cols
            c = (i + 1) * cols + j
            d = (i + 1) * cols + (j + 1) % cols
            faces += [(a, b, d), (a, d, c)]
    return faces


def _fan_cap(center: int, ring: list[int], flip: bool) -> list[tuple[int, int, int]]:
    faces = []
    for j in range(len(ring)):
        a, b = ring[j], ring[(j + 1) % len(ring)]
        faces.append((center, b, a) if flip else (center, a, b))
    return faces


def sphere(radii=(1.0, 1.0, 1.0), n_lat: int = 16, n_lon: int = 24) -> Mesh:
    """Ellipsoid with semi-axes ``radii`` (a sphere when all equal)."""
    verts = [(0.0, 0.0, 1.0)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)))
    verts.append((0.0, 0.0, -1.0))
    faces = [(i + 1, j + 1, k + 1) for i, j, k in _grid_faces(n_lat - 1, n_lon, True)]
    top_ring = list(range(1, n_lon + 1))
    bot_ring = list(range(len(verts) - 1 - n_lon, len(verts) - 1))
    faces += _fan_cap(0, top_ring, False) + _fan_cap(len(verts) - 1, bot_ring, True)
    v = np.array(verts) * np.asarray(radii, dtype=np.float64)
    return Mesh(v, np.array(faces, dtype=np.int64))


def box(size=(1.0, 1.0, 1.0)) -> Mesh:
    sx, sy, sz = (0.5 * s for s in size)
    v = np.array(
        [[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)], dtype=np.float64
    )
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return Mesh(v, np.array(faces, dtype=np.int64))


def _revolve(profile: list[tuple[float, float]], segments: int, cap_bottom: bool, cap_top: bool):
    """Surface of revolution about z from a (radius, z) profile."""
    verts = []
    for r, z in profile:
        for j in range(segments):
            ph = 2 * np.pi * j / segments
            verts.append((r * np.cos(ph), r * np.sin(ph), z))
    faces = _grid_faces(len(profile), segments, True)
    if cap_bottom:
        verts.append((0.0, 0.0, profile[0][1]))
        faces += _fan_cap(len(verts) - 1, list(range(segments)), True)
    if cap_top:
        verts.append((0.0, 0.0, profile[-1][1]))
        top = list(range((len(profile) - 1) * segments, len(profile) * segments))
        faces += _fan_cap(len(verts) - 1, top, False)
    return Mesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 24) -> Mesh:
    h = 0.5 * height
    return _revolve([(radius, -h), (radius, h)], segments, True, True)


def cone(radius: float = 0.5, height: float = 1.0, segments: int = 24) -> Mesh:
    h = 0.5 * height
    # apex ring of zero radius keeps the grid construction uniform
    return _revolve([(radius, -h), (0.0, h)], segments, True, False)


def torus(major: float = 0.7, minor: float = 0.25, n_major: int = 24, n_minor: int = 12) -> Mesh:
    verts = []
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            w = 2 * np.pi * j / n_minor
            r = major + minor * np.cos(w)
            verts.append((r * np.cos(u), r * np.sin(u), minor * np.sin(w)))
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = i * n_minor + (j + 1) % n_minor
            c = ((i + 1) % n_major) * n_minor + j
            d = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            faces += [(a, b, d), (a, d, c)]
    return Mesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def plane(size=(1.0, 1.0)) -> Mesh:
    sx, sy = 0.5 * size[0], 0.5 * size[1]
    v = np.array([[-sx, -sy, 0.0], [sx, -sy, 0.0], [sx, sy, 0.0], [-sx, sy, 0.0]])
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64))


def random_shape(kind: str, rng: np.random.Generator, jitter: float = 0.5) -> Mesh:
    """One randomly proportioned instance of ``kind``.

    ``jitter`` sets the spread of the aspect ratios: each extent is drawn from
    ``[1 - jitter, 1 + jitter]`` times its nominal value.
    """
    lo, hi = 1.0 - jitter, 1.0 + jitter

    def u(k=None):
        return rng.uniform(lo, hi, k)

    if kind == "sphere":
        return sphere(tuple(u(3)))
    if kind == "box":
        return box(tuple(u(3)))
    if kind == "cylinder":
        return cylinder(0.5 * u(), u())
    if kind == "cone":
        return cone(0.5 * u(), u())
    if kind == "torus":
        return torus(0.7 * u(), 0.25 * u())
    if kind == "plane":
        return plane(tuple(u(2)))
    raise ValueError(f"unknown shape {kind!r}")


def synthetic_roster(
    classes=("sphere", "box", "cylinder"), per_class: int = 60, seed: int = 0, jitter: float = 0.5
) -> list[Mesh]:
    """``per_class`` meshes for each class; labels follow ``classes`` order."""
    rng = np.random.default_rng(seed)
    meshes = []
    for label, kind in enumerate(classes):
        for i in range(per_class):
            m = random_shape(kind, rng, jitter)
            m.class_label = label
            m.object_id = f"{kind}/{i:04d}"
            meshes.append(m)
    return meshes
