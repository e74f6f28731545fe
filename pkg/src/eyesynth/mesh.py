"""Optional user-supplied head geometry: OBJ loading and triangle tracing.

A loaded mesh replaces the procedural head patch around the eye.  Tracing
is brute-force vectorized Moller-Trumbore over all triangles, intended for
the low-polygon face patches this pipeline needs, not general scenes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .optics import HIT_EPS, normalize_rows


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray          # (V, 3) mm
    faces: np.ndarray             # (F, 3) int
    uvs: np.ndarray | None = None        # (V, 2) per-vertex, optional
    texture: np.ndarray | None = None    # (H, W, 3) float [0,1], optional

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("need (V,3) vertices and (F,3) faces")
        if f.min(initial=0) < 0 or f.max(initial=-1) >= len(v):
            raise MeshError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def intersect_batch(self, o: np.ndarray, d: np.ndarray):
        """Nearest hit per ray: (t, face_index); +inf / -1 where none."""
        v0 = self.vertices[self.faces[:, 0]]
        e1 = self.vertices[self.faces[:, 1]] - v0
        e2 = self.vertices[self.faces[:, 2]] - v0
        t_best = np.full(len(o), np.inf)
        face_best = np.full(len(o), -1, dtype=np.int64)
        # chunk over faces to bound the (rays x faces) temporaries
        step = max(1, 4_000_000 // max(len(o), 1))
        for f0 in range(0, len(self.faces), step):
            sl = slice(f0, f0 + step)
            t, fi = _moller_trumbore(o, d, v0[sl], e1[sl], e2[sl])
            closer = t < t_best
            t_best = np.where(closer, t, t_best)
            face_best = np.where(closer, np.where(fi >= 0, fi + f0, -1),
                                 face_best)
        return t_best, face_best

    def normals_for(self, face_idx: np.ndarray) -> np.ndarray:
        v0 = self.vertices[self.faces[face_idx, 0]]
        v1 = self.vertices[self.faces[face_idx, 1]]
        v2 = self.vertices[self.faces[face_idx, 2]]
        return normalize_rows(np.cross(v1 - v0, v2 - v0))


def _moller_trumbore(o, d, v0, e1, e2):
    """Rays (N,3) against triangles (M,3); returns per-ray (t, tri index)."""
    pvec = np.cross(d[:, None, :], e2[None, :, :])          # (N, M, 3)
    det = np.einsum("mk,nmk->nm", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
    tvec = o[:, None, :] - v0[None, :, :]
    u = np.einsum("nmk,nmk->nm", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None, :, :])
    v = np.einsum("nk,nmk->nm", d, qvec) * inv
    t = np.einsum("mk,nmk->nm", e2, qvec) * inv
    ok = ((np.abs(det) > 1e-12) & (u >= 0.0) & (v >= 0.0)
          & (u + v <= 1.0) & (t > HIT_EPS))
    t = np.where(ok, t, np.inf)
    best = np.argmin(t, axis=1)
    t_best = t[np.arange(len(o)), best]
    return t_best, np.where(np.isfinite(t_best), best, -1)


def load_obj(path, texture: np.ndarray | None = None) -> TriangleMesh:
    """Minimal OBJ reader: v / vt / f records, triangulating polygons."""
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    uv_of_vertex: dict[int, int] = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"{path}:{lineno}: bad vertex")
            verts.append([float(x) for x in parts[1:4]])
        elif tag == "vt":
            uvs.append([float(parts[1]), float(parts[2]) if len(parts) > 2
                        else 0.0])
        elif tag == "f":
            idx = []
            for token in parts[1:]:
                fields = token.split("/")
                vi = int(fields[0])
                vi = vi - 1 if vi > 0 else len(verts) + vi
                if len(fields) > 1 and fields[1]:
                    ti = int(fields[1])
                    uv_of_vertex[vi] = ti - 1 if ti > 0 else len(uvs) + ti
                idx.append(vi)
            if len(idx) < 3:
                raise MeshError(f"{path}:{lineno}: face with <3 vertices")
            for k in range(1, len(idx) - 1):   # fan triangulation
                faces.append((idx[0], idx[k], idx[k + 1]))
    if not faces:
        raise MeshError(f"{path}: no faces found")
    uv_arr = None
    if uvs and uv_of_vertex:
        uv_arr = np.zeros((len(verts), 2))
        for vi, ti in uv_of_vertex.items():
            uv_arr[vi] = uvs[ti]
    return TriangleMesh(np.array(verts), np.array(faces), uvs=uv_arr,
                        texture=texture)
