"""Geometry and shading math kernel.

All lengths are millimetres, all geometry double precision.  Scalar entry
points (Ray/surface types, `intersect_*`, `refract`, ...) define the
contracts; `*_batch` variants run the same math vectorized over numpy
arrays and are what the renderer actually calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .rng import Rng

HIT_EPS = 1e-6  # minimum ray parameter, mm; avoids self-intersection


class SurfaceId(IntEnum):
    CORNEA = 0        # tear-film interface over the corneal cap
    SCLERA = 1
    IRIS = 2
    IRIS_RING = 3     # interior eyeball wall anterior of the iris plane
    RETINA = 4
    EYELID = 5
    CARUNCLE = 6
    HEAD = 7
    GLASSES_LENS = 8
    GLASSES_FRAME = 9
    EMITTER = 10
    ENVIRONMENT = 11


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = math.sqrt(float(v @ v))
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


def normalize_rows(v: np.ndarray) -> np.ndarray:
    n = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    return v / np.where(n == 0.0, 1.0, n)


@dataclass(frozen=True)
class Transform:
    """Rigid transform y = R x + t."""

    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply_point(self, p):
        return np.asarray(p, dtype=float) @ self.rot.T + self.trans

    def apply_dir(self, d):
        return np.asarray(d, dtype=float) @ self.rot.T

    def inverse(self) -> "Transform":
        rt = self.rot.T
        return Transform(rt, -(rt @ self.trans))

    def compose(self, other: "Transform") -> "Transform":
        """self ∘ other: first apply `other`, then `self`."""
        return Transform(self.rot @ other.rot, self.rot @ other.trans + self.trans)

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def rotation_x(deg: float) -> "Transform":
        a = math.radians(deg)
        c, s = math.cos(a), math.sin(a)
        return Transform(np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float))

    @staticmethod
    def rotation_y(deg: float) -> "Transform":
        a = math.radians(deg)
        c, s = math.cos(a), math.sin(a)
        return Transform(np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float))

    @staticmethod
    def rotation_z(deg: float) -> "Transform":
        a = math.radians(deg)
        c, s = math.cos(a), math.sin(a)
        return Transform(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        n = math.sqrt(float(d @ d))
        if abs(n - 1.0) > 1e-9:
            d = d / n
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class SpheroidSurface:
    """Axial spheroid x^2 + y^2 + (1+Q) z^2 - 2 R z = 0 in its local frame.

    Apex at the local origin, symmetry axis along local +z (pointing from
    the apex into the body of the surface).  `z_cap` clips the surface to
    the cap 0 <= z <= z_cap.
    """

    asphericity: float            # Q
    apex_radius: float            # R, mm
    frame: Transform = field(default_factory=Transform.identity)
    z_cap: float = math.inf

    def __post_init__(self):
        if self.apex_radius <= 0.0:
            raise ValueError("apex radius must be positive")
        if not -1.0 <= self.asphericity <= 1.0:
            raise ValueError("asphericity out of range [-1, 1]")

    def implicit(self, p) -> float:
        x, y, z = np.asarray(p, dtype=float)
        return x * x + y * y + (1.0 + self.asphericity) * z * z - 2.0 * self.apex_radius * z


@dataclass(frozen=True)
class SphereSurface:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def implicit(self, p) -> float:
        d = np.asarray(p, dtype=float) - self.center
        return float(d @ d) - self.radius * self.radius


@dataclass(frozen=True)
class InterfaceHit:
    t: float
    point: np.ndarray
    normal: np.ndarray  # unit, oriented against the incoming ray
    surface_id: SurfaceId = SurfaceId.ENVIRONMENT


# ---------------------------------------------------------------------------
# quadratic solving (stable form: q = -(b + sign(b) sqrt(disc)) / 2)
# ---------------------------------------------------------------------------

def _quadratic_roots_batch(a, b, c):
    """Roots of a t^2 + b t + c = 0, elementwise; NaN where no real root."""
    disc = b * b - 4.0 * a * c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    q = -0.5 * (b + np.where(b >= 0.0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(ok, q / a, np.nan)
        t1 = np.where(ok, c / q, np.nan)
    lo = np.fmin(t0, t1)
    hi = np.fmax(t0, t1)
    return lo, hi


def spheroid_hit_batch(o: np.ndarray, d: np.ndarray, asphericity: float,
                       apex_radius: float, z_cap: float = math.inf,
                       z_min: float = 0.0, eps: float = HIT_EPS):
    """Smallest t > eps where rays (local frame) meet the clipped spheroid cap.

    Returns (t, z) with t = +inf where there is no valid hit.
    """
    p = 1.0 + asphericity
    a = d[:, 0] ** 2 + d[:, 1] ** 2 + p * d[:, 2] ** 2
    b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
               + p * o[:, 2] * d[:, 2] - apex_radius * d[:, 2])
    c = (o[:, 0] ** 2 + o[:, 1] ** 2 + p * o[:, 2] ** 2
         - 2.0 * apex_radius * o[:, 2])
    # a == 0 happens only for Q = -1 with axial rays; treat linearly
    lin = np.abs(a) < 1e-14
    lo, hi = _quadratic_roots_batch(np.where(lin, 1.0, a), b, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lin = np.where(lin, -c / b, np.nan)
    lo = np.where(lin, t_lin, lo)
    hi = np.where(lin, np.nan, hi)

    t = np.full(len(o), np.inf)
    z = np.zeros(len(o))
    # boundary tolerance keeps the limbus seam watertight
    ztol = 1e-9 * max(1.0, abs(z_cap) if math.isfinite(z_cap) else 1.0)
    for root in (lo, hi):
        zr = o[:, 2] + root * d[:, 2]
        valid = (np.isfinite(root) & (root > eps)
                 & (zr >= z_min - ztol) & (zr <= z_cap + ztol) & (root < t))
        t = np.where(valid, root, t)
        z = np.where(valid, zr, z)
    return t, z


def spheroid_normal_batch(p_local: np.ndarray, asphericity: float,
                          apex_radius: float) -> np.ndarray:
    """Outward normal from the implicit gradient (2x, 2y, 2(1+Q)z - 2R)."""
    g = np.empty_like(p_local)
    g[:, 0] = p_local[:, 0]
    g[:, 1] = p_local[:, 1]
    g[:, 2] = (1.0 + asphericity) * p_local[:, 2] - apex_radius
    return normalize_rows(g)


def sphere_hit_batch(o: np.ndarray, d: np.ndarray, center, radius: float,
                     eps: float = HIT_EPS, which: str = "nearest"):
    """Smallest valid t > eps against a sphere; +inf where no hit.

    which = 'nearest' | 'entering' (first root only) | 'exiting' (second root).
    """
    oc = o - np.asarray(center, dtype=float)
    b = 2.0 * np.sum(oc * d, axis=1)
    c = np.sum(oc * oc, axis=1) - radius * radius
    lo, hi = _quadratic_roots_batch(np.ones(len(o)), b, c)
    if which == "entering":
        t = np.where(np.isfinite(lo) & (lo > eps), lo, np.inf)
    elif which == "exiting":
        t = np.where(np.isfinite(hi) & (hi > eps), hi, np.inf)
    else:
        t = np.where(np.isfinite(lo) & (lo > eps), lo, np.inf)
        t2 = np.where(np.isfinite(hi) & (hi > eps), hi, np.inf)
        t = np.where(np.isfinite(t), t, t2)
    return t


def spheres_hit_batch(o: np.ndarray, d: np.ndarray, centers: np.ndarray,
                      radii: np.ndarray, eps: float = HIT_EPS):
    """Nearest hit over K spheres at once; +inf where no hit."""
    if len(centers) == 0:
        return np.full(len(o), np.inf)
    oc = o[:, None, :] - centers[None, :, :]            # (N, K, 3)
    b = 2.0 * np.einsum("nkj,nj->nk", oc, d)
    c = np.einsum("nkj,nkj->nk", oc, oc) - radii[None, :] ** 2
    disc = b * b - 4.0 * c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    q = -0.5 * (b + np.where(b >= 0.0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(ok, q, np.nan)
        t1 = np.where(ok, c / q, np.nan)
    lo = np.fmin(t0, t1)
    hi = np.fmax(t0, t1)
    t = np.where(np.isfinite(lo) & (lo > eps), lo,
                 np.where(np.isfinite(hi) & (hi > eps), hi, np.inf))
    return t.min(axis=1)


def ellipsoid_hit_batch(o: np.ndarray, d: np.ndarray, center, semi_axes,
                        eps: float = HIT_EPS):
    """Both roots against an axis-aligned ellipsoid; (lo, hi), NaN where none."""
    inv = 1.0 / np.asarray(semi_axes, dtype=float)
    oc = (o - np.asarray(center, dtype=float)) * inv
    dd = d * inv
    a = np.sum(dd * dd, axis=1)
    b = 2.0 * np.sum(oc * dd, axis=1)
    c = np.sum(oc * oc, axis=1) - 1.0
    return _quadratic_roots_batch(a, b, c)


def plane_hit_batch(o: np.ndarray, d: np.ndarray, z_plane: float,
                    eps: float = HIT_EPS):
    """t where rays cross the plane z = z_plane; +inf where parallel/behind."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (z_plane - o[:, 2]) / d[:, 2]
    return np.where(np.isfinite(t) & (t > eps), t, np.inf)


def torus_hit_batch(o: np.ndarray, d: np.ndarray, center, major_radius: float,
                    tube_radius: float, eps: float = HIT_EPS,
                    steps: int = 24, bisect_iters: int = 32):
    """First t > eps against a z-axis torus, by bracketed marching + bisection.

    Avoids the quartic; fixed iteration counts keep it deterministic.  Rays
    are first clipped to the torus' z-slab and culled against its annulus
    footprint, so the march runs on a short bracket for few rays.
    """
    n = len(o)
    oc = o - np.asarray(center, dtype=float)

    # slab |z| <= tube_radius contains the whole torus
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-tube_radius - oc[:, 2]) / d[:, 2]
        t2 = (tube_radius - oc[:, 2]) / d[:, 2]
    lo = np.fmin(t1, t2)
    hi = np.fmax(t1, t2)
    parallel = np.abs(d[:, 2]) < 1e-12
    inside_slab = np.abs(oc[:, 2]) <= tube_radius
    # parallel rays inside the slab: fall back to the bounding-sphere span
    if np.any(parallel & inside_slab):
        r_bound = major_radius + tube_radius
        b = 2.0 * np.sum(oc * d, axis=1)
        c = np.sum(oc * oc, axis=1) - r_bound * r_bound
        blo, bhi = _quadratic_roots_batch(np.ones(n), b, c)
        lo = np.where(parallel, blo, lo)
        hi = np.where(parallel, bhi, hi)
    lo = np.fmax(lo, eps)
    has_span = np.isfinite(lo) & np.isfinite(hi) & (hi > lo) \
        & ~(parallel & ~inside_slab)

    # annulus cull: the transverse distance over the span must overlap
    # [major - tube, major + tube]
    def rho2_at(t):
        px = oc[:, 0] + t * d[:, 0]
        py = oc[:, 1] + t * d[:, 1]
        return px * px + py * py
    dxy2 = d[:, 0] ** 2 + d[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t_close = -(oc[:, 0] * d[:, 0] + oc[:, 1] * d[:, 1]) / dxy2
    t_close = np.clip(np.where(np.isfinite(t_close), t_close, lo), lo, hi)
    r2_ends = np.fmax(rho2_at(lo), rho2_at(hi))
    r2_min = np.fmin(np.fmin(rho2_at(lo), rho2_at(hi)), rho2_at(t_close))
    has_span &= (r2_min <= (major_radius + tube_radius) ** 2) \
        & (r2_ends >= (major_radius - tube_radius) ** 2)

    t_hit = np.full(n, np.inf)
    if not np.any(has_span):
        return t_hit
    idx = np.nonzero(has_span)[0]
    a0 = lo[idx]
    a1 = hi[idx]
    ocs, ds = oc[idx], d[idx]

    def f(ts):
        p = ocs + ts[:, None] * ds
        rho = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
        return (rho - major_radius) ** 2 + p[:, 2] ** 2 - tube_radius ** 2

    span = (a1 - a0) / steps
    t_prev = a0.copy()
    f_prev = f(t_prev)
    found = np.zeros(len(idx), dtype=bool)
    bra_lo = np.zeros(len(idx))
    bra_hi = np.zeros(len(idx))
    for k in range(1, steps + 1):
        t_cur = a0 + span * k
        f_cur = f(t_cur)
        cross = (~found) & (f_prev > 0.0) & (f_cur <= 0.0)
        bra_lo = np.where(cross, t_prev, bra_lo)
        bra_hi = np.where(cross, t_cur, bra_hi)
        found |= cross
        t_prev, f_prev = t_cur, f_cur
    if np.any(found):
        sel = np.nonzero(found)[0]
        tl, th = bra_lo[sel], bra_hi[sel]
        ocb, db = ocs[sel], ds[sel]

        def fb(ts):
            p = ocb + ts[:, None] * db
            rho = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
            return (rho - major_radius) ** 2 + p[:, 2] ** 2 - tube_radius ** 2

        for _ in range(bisect_iters):
            tm = 0.5 * (tl + th)
            fm = fb(tm)
            neg = fm <= 0.0
            th = np.where(neg, tm, th)
            tl = np.where(neg, tl, tm)
        t_hit[idx[sel]] = 0.5 * (tl + th)
    return t_hit


def torus_normal_batch(p: np.ndarray, center, major_radius: float) -> np.ndarray:
    q = p - np.asarray(center, dtype=float)
    rho = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2)
    rho = np.where(rho == 0.0, 1.0, rho)
    scale = (rho - major_radius) / rho
    n = np.stack([q[:, 0] * scale, q[:, 1] * scale, q[:, 2]], axis=1)
    return normalize_rows(n)


# ---------------------------------------------------------------------------
# scalar contract API
# ---------------------------------------------------------------------------

def intersect_spheroid(ray: Ray, s: SpheroidSurface,
                       eps: float = HIT_EPS) -> InterfaceHit | None:
    """Nearest hit on the spheroid cap; ray must already be in the local frame."""
    o = ray.origin[None, :]
    d = ray.direction[None, :]
    t, _ = spheroid_hit_batch(o, d, s.asphericity, s.apex_radius, s.z_cap, eps=eps)
    if not math.isfinite(t[0]):
        return None
    point = ray.at(float(t[0]))
    n = spheroid_normal_batch(point[None, :], s.asphericity, s.apex_radius)[0]
    if float(n @ ray.direction) > 0.0:
        n = -n
    return InterfaceHit(float(t[0]), point, n, SurfaceId.CORNEA)


def intersect_sphere(ray: Ray, s: SphereSurface,
                     eps: float = HIT_EPS) -> InterfaceHit | None:
    o = ray.origin[None, :]
    d = ray.direction[None, :]
    t = sphere_hit_batch(o, d, s.center, s.radius, eps=eps)
    if not math.isfinite(t[0]):
        return None
    point = ray.at(float(t[0]))
    n = unit(point - s.center)
    if float(n @ ray.direction) > 0.0:
        n = -n
    return InterfaceHit(float(t[0]), point, n, SurfaceId.SCLERA)


def refract(direction, normal, n1: float, n2: float):
    """Snell refraction of a unit direction at a unit normal facing the ray.

    Returns the transmitted unit direction, or None on total internal
    reflection.  Requires direction . normal < 0.
    """
    d = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    cos_i = -float(d @ n)
    if cos_i <= 0.0:
        raise ValueError("normal must face the incident side (dir . normal < 0)")
    eta = n1 / n2
    sin2_t = eta * eta * (1.0 - cos_i * cos_i)
    if sin2_t > 1.0:
        return None
    cos_t = math.sqrt(1.0 - sin2_t)
    return unit(eta * d + (eta * cos_i - cos_t) * n)


def refract_batch(d: np.ndarray, n: np.ndarray, eta):
    """Vectorized refraction; returns (directions, tir_mask).

    `eta` = n1/n2 per ray (scalar or array); normals must face the rays.
    """
    eta = np.asarray(eta, dtype=float)
    cos_i = -np.sum(d * n, axis=1)
    sin2_t = (eta ** 2) * (1.0 - cos_i ** 2)
    tir = sin2_t > 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin2_t, 0.0, None))
    out = eta[..., None] * d + (eta * cos_i - cos_t)[:, None] * n
    return normalize_rows(out), tir


def reflect_batch(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    return d - 2.0 * np.sum(d * n, axis=1, keepdims=True) * n


def fresnel_dielectric(cos_i, n1: float, n2: float):
    """Unpolarized Fresnel reflectance for cos of incidence angle in (0, 1]."""
    cos_i = np.clip(cos_i, 0.0, 1.0)
    sin2_t = (n1 / n2) ** 2 * (1.0 - cos_i ** 2)
    tir = sin2_t >= 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin2_t, 0.0, None))
    r_par = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t)
    r_perp = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    r = 0.5 * (r_par ** 2 + r_perp ** 2)
    out = np.where(tir, 1.0, r)
    return float(out) if np.ndim(out) == 0 else out


def beckmann_density(theta_h: float, m: float):
    """Microfacet slope density D(theta) = exp(-tan^2/m^2) / (pi m^2 cos^4)."""
    cos_h = np.cos(theta_h)
    tan2 = np.tan(theta_h) ** 2
    d = np.exp(-tan2 / (m * m)) / (math.pi * m * m * cos_h ** 4)
    return float(d) if np.ndim(d) == 0 else d


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------

def sample_disc(rng: Rng, radius: float = 1.0) -> tuple[float, float]:
    """Uniform point on a disc of given radius."""
    r = radius * math.sqrt(rng.next())
    phi = 2.0 * math.pi * rng.next()
    return r * math.cos(phi), r * math.sin(phi)


def sample_cone(rng: Rng, cos_max: float) -> np.ndarray:
    """Uniform direction inside a cone around +z with half-angle acos(cos_max)."""
    cos_t = 1.0 - rng.next() * (1.0 - cos_max)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * rng.next()
    return np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t])


def sample_hemisphere(rng: Rng, normal) -> np.ndarray:
    """Cosine-weighted direction about `normal`."""
    u1, u2 = rng.next(), rng.next()
    d = cosine_hemisphere_batch(np.array([u1]), np.array([u2]),
                                np.asarray(normal, dtype=float)[None, :])[0]
    return d


def _onb_batch(n: np.ndarray):
    """Branchless orthonormal basis (tangent, bitangent) per normal."""
    sign = np.where(n[:, 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t = np.stack([1.0 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    s = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t, s


def cosine_hemisphere_batch(u1: np.ndarray, u2: np.ndarray,
                            n: np.ndarray) -> np.ndarray:
    r = np.sqrt(u1)
    phi = 2.0 * math.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.clip(1.0 - u1, 0.0, None))
    t, s = _onb_batch(n)
    return normalize_rows(x[:, None] * t + y[:, None] * s + z[:, None] * n)
