"""Exact sequential ray tracing through axially symmetric optical systems.

Conventions used throughout:

* All lengths are millimeters; directions are unit 3-vectors; the optical
  axis is +z and every ray propagates with direction_z > 0.
* A surface radius is signed: positive when the center of curvature lies
  downstream of the vertex (z > vertex_z).
* Surface normals handed to ``refract`` always face against the incoming
  ray (normal . direction < 0).
* Refractive indices are those of the design wavelength; no dispersion
  model exists here, so wavelength enters only through the index values
  stored in a prescription.

Everything in this module is a pure function of its arguments and safe to
call concurrently.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Newton defaults: tolerance on the axial root function (mm) and iteration cap.
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 64

# A hit must lie strictly in front of the ray origin; anything closer than
# this is treated as the surface the ray just left.
MIN_HIT_DISTANCE = 1e-9

# Rays steeper than this against the axis cannot be propagated forward.
MIN_FORWARD_DZ = 1e-9


class SurfaceKind(enum.Enum):
    SPHERICAL = "spherical"
    PLANAR = "planar"
    STOP = "stop"


@dataclass(frozen=True)
class Surface:
    """One surface of a sequential system.

    ``radius`` is meaningful only for spherical surfaces. ``index_after`` is
    the refractive index of the medium following the surface; stops do not
    change the medium and ignore it.
    """

    kind: SurfaceKind
    vertex_z: float
    semi_aperture: float
    index_after: float = 1.0
    radius: float = 0.0

    def __post_init__(self):
        if self.semi_aperture <= 0:
            raise ValueError(f"semi_aperture must be positive, got {self.semi_aperture}")
        if self.index_after < 1.0:
            raise ValueError(f"index_after must be >= 1, got {self.index_after}")
        if self.kind is SurfaceKind.SPHERICAL and abs(self.radius) <= self.semi_aperture:
            raise ValueError(
                f"spherical cap undefined: |radius|={abs(self.radius)} must exceed "
                f"semi_aperture={self.semi_aperture}"
            )

    @property
    def sag_depth(self) -> float:
        """Axial extent of the cap out to the clear semi-aperture (>= 0)."""
        if self.kind is not SurfaceKind.SPHERICAL:
            return 0.0
        r = abs(self.radius)
        return r - math.sqrt(r * r - self.semi_aperture * self.semi_aperture)


@dataclass(frozen=True)
class OpticalSystem:
    """Ordered surfaces plus the source and training-target planes."""

    surfaces: tuple[Surface, ...]
    source_z: float
    target_z: float
    index_before_first: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        zs = [s.vertex_z for s in self.surfaces]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError("surface vertices must be strictly increasing in z")
        if self.surfaces:
            if self.source_z >= zs[0]:
                raise ValueError(f"source_z={self.source_z} must precede first vertex {zs[0]}")
            if self.target_z <= zs[-1]:
                raise ValueError(f"target_z={self.target_z} must follow last vertex {zs[-1]}")
        if self.index_before_first < 1.0:
            raise ValueError("index_before_first must be >= 1")


class Ray3(NamedTuple):
    """A 3D ray: origin (mm) and unit direction, both float64 arrays."""

    origin: np.ndarray
    direction: np.ndarray

    @classmethod
    def make(cls, origin, direction) -> "Ray3":
        """Build a ray, normalizing the direction."""
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("direction must be nonzero")
        return cls(o, d / n)


class SurfaceHit(NamedTuple):
    point: np.ndarray
    normal: np.ndarray


class TraceStatus(enum.IntEnum):
    EMERGED = 0
    MISSED = 1
    VIGNETTED = 2
    TIR = 3


@dataclass(frozen=True)
class TraceOutcome:
    """Result of tracing one ray: an emerged ray or the surface that ended it."""

    status: TraceStatus
    ray: Ray3 | None = None
    surface_index: int = -1

    @property
    def ok(self) -> bool:
        return self.status is TraceStatus.EMERGED


def _sag(radius: float, r2) -> float:
    """Sag z(r) of a spherical surface relative to its vertex, from r squared."""
    return radius - math.copysign(math.sqrt(radius * radius - r2), radius)


def _cap_contains(surface: Surface, point: np.ndarray, tol: float = 1e-9) -> bool:
    """True when a point on the sphere lies on the clear cap (near hemisphere,
    lateral radius within the semi-aperture)."""
    r2 = point[0] * point[0] + point[1] * point[1]
    sa = surface.semi_aperture
    if r2 > (sa + tol) * (sa + tol):
        return False
    dz = point[2] - surface.vertex_z
    sag_max = surface.sag_depth
    if surface.radius > 0:
        return -tol <= dz <= sag_max + tol
    return -sag_max - tol <= dz <= tol


def _oriented_normal(normal: np.ndarray, direction: np.ndarray) -> np.ndarray:
    return -normal if float(normal @ direction) > 0 else normal


def intersect_analytic(ray: Ray3, surface: Surface) -> SurfaceHit | None:
    """Closed-form ray/surface intersection.

    Spherical surfaces solve the ray-sphere quadratic and keep the first root
    that lies on the clear cap; planar surfaces and stops solve the ray-plane
    equation. Returns None when there is no forward hit (spherical: no root on
    the cap). The normal faces against the incoming ray.
    """
    o, d = ray
    if surface.kind is SurfaceKind.SPHERICAL:
        center = np.array([0.0, 0.0, surface.vertex_z + surface.radius])
        oc = o - center
        b = 2.0 * float(d @ oc)
        c = float(oc @ oc) - surface.radius * surface.radius
        disc = b * b - 4.0 * c
        if disc < 0:
            return None
        sq = math.sqrt(disc)
        for t in ((-b - sq) / 2.0, (-b + sq) / 2.0):
            if t <= MIN_HIT_DISTANCE:
                continue
            p = o + t * d
            if _cap_contains(surface, p):
                n = (p - center) / np.linalg.norm(p - center)
                return SurfaceHit(p, _oriented_normal(n, d))
        return None

    # Planar refractor or stop: infinite plane; aperture clipping is the
    # tracer's job so that out-of-aperture plane hits read as vignetting.
    if abs(d[2]) < MIN_FORWARD_DZ:
        return None
    t = (surface.vertex_z - o[2]) / d[2]
    if t <= MIN_HIT_DISTANCE:
        return None
    p = o + t * d
    n = np.array([0.0, 0.0, -1.0 if d[2] > 0 else 1.0])
    return SurfaceHit(p, n)


def intersect_newton(
    ray: Ray3,
    surface: Surface,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> SurfaceHit | None:
    """Newton iteration on f(t) = z(t) - sag(r(t)), seeded at the ray's
    vertex-plane crossing.

    Converges when |f| < tol. Planar surfaces make f affine, so the seed is
    already the root. Returns None when the iteration fails to converge, the
    iterate leaves the sphere's lateral footprint, or the converged point is
    off the cap or behind the origin.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    o, d = ray
    if abs(d[2]) < MIN_FORWARD_DZ:
        return None
    t = (surface.vertex_z - o[2]) / d[2]

    if surface.kind is not SurfaceKind.SPHERICAL:
        if t <= MIN_HIT_DISTANCE:
            return None
        p = o + t * d
        n = np.array([0.0, 0.0, -1.0 if d[2] > 0 else 1.0])
        return SurfaceHit(p, n)

    R = surface.radius
    converged = False
    for _ in range(max_iter):
        p = o + t * d
        r2 = p[0] * p[0] + p[1] * p[1]
        rad = R * R - r2
        if rad <= 0:
            return None
        f = p[2] - surface.vertex_z - _sag(R, r2)
        if abs(f) < tol:
            converged = True
            break
        # d sag/dt = sign(R) * (x dx + y dy) / sqrt(R^2 - r^2)
        fp = d[2] - math.copysign(1.0, R) * (p[0] * d[0] + p[1] * d[1]) / math.sqrt(rad)
        if fp == 0:
            return None
        t -= f / fp
    if not converged or t <= MIN_HIT_DISTANCE:
        return None
    p = o + t * d
    if not _cap_contains(surface, p):
        return None
    center = np.array([0.0, 0.0, surface.vertex_z + R])
    n = (p - center) / np.linalg.norm(p - center)
    return SurfaceHit(p, _oriented_normal(n, d))


def refract(direction: np.ndarray, normal: np.ndarray, n1: float, n2: float) -> np.ndarray | None:
    """Vector Snell refraction; returns None on total internal reflection.

    Expects unit vectors with normal . direction < 0. With mu = n1/n2 and
    c = -normal . direction the transmitted direction is
    mu*direction + (mu*c - sqrt(1 - mu^2 (1 - c^2))) * normal.
    """
    mu = n1 / n2
    c = -float(normal @ direction)
    k = 1.0 - mu * mu * (1.0 - c * c)
    if k < 0:
        return None
    return mu * direction + (mu * c - math.sqrt(k)) * normal


def propagate_to_plane(ray: Ray3, plane_z: float) -> np.ndarray:
    """Free-space transport: (x, y) where the ray meets the plane z = plane_z."""
    o, d = ray
    if d[2] <= MIN_FORWARD_DZ:
        raise ValueError(f"ray does not travel toward the plane (direction_z={d[2]})")
    t = (plane_z - o[2]) / d[2]
    return o[:2] + t * d[:2]


def trace(
    ray: Ray3,
    system: OpticalSystem,
    method: str = "newton",
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> TraceOutcome:
    """Trace a ray surface-by-surface through the system.

    Each surface is intersected (Newton by default, ``method="analytic"`` for
    the closed form), clipped against its semi-aperture, and refracted;
    stops only clip. The emerged ray's origin lies on the final surface. An
    empty system returns the input ray unchanged.
    """
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("ray direction must be unit length")
    if d[2] <= 0:
        raise ValueError("ray must propagate toward +z")
    if method not in ("newton", "analytic"):
        raise ValueError(f"unknown intersection method {method!r}")

    intersect = intersect_newton if method == "newton" else intersect_analytic
    n_cur = system.index_before_first
    for idx, s in enumerate(system.surfaces):
        if method == "newton":
            hit = intersect(Ray3(o, d), s, tol, max_iter)
        else:
            hit = intersect(Ray3(o, d), s)
        if hit is None:
            return TraceOutcome(TraceStatus.MISSED, surface_index=idx)
        p, normal = hit
        if s.kind is not SurfaceKind.SPHERICAL:
            if math.hypot(p[0], p[1]) > s.semi_aperture:
                return TraceOutcome(TraceStatus.VIGNETTED, surface_index=idx)
        o = p
        if s.kind is SurfaceKind.STOP:
            continue
        d_new = refract(d, normal, n_cur, s.index_after)
        if d_new is None:
            return TraceOutcome(TraceStatus.TIR, surface_index=idx)
        d = d_new
        n_cur = s.index_after
    return TraceOutcome(TraceStatus.EMERGED, ray=Ray3(o, d))


def trace_batch(
    origins: np.ndarray,
    directions: np.ndarray,
    system: OpticalSystem,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
):
    """Vectorized Newton-path trace of N rays.

    Returns (origins_out, directions_out, status, surface_index) where rows of
    the outputs are meaningful only where status == TraceStatus.EMERGED.
    Results are identical to calling ``trace`` per ray.
    """
    o = np.array(origins, dtype=np.float64)
    d = np.array(directions, dtype=np.float64)
    n = o.shape[0]
    status = np.full(n, TraceStatus.EMERGED.value, dtype=np.uint8)
    surf_idx = np.full(n, -1, dtype=np.int32)
    alive = np.ones(n, dtype=bool)
    n_cur = system.index_before_first

    for idx, s in enumerate(system.surfaces):
        if not alive.any():
            break
        ai = np.flatnonzero(alive)
        ao, ad = o[ai], d[ai]

        forward = ad[:, 2] > MIN_FORWARD_DZ
        t = np.where(forward, (s.vertex_z - ao[:, 2]) / np.where(forward, ad[:, 2], 1.0), 0.0)
        ok = forward.copy()

        if s.kind is SurfaceKind.SPHERICAL:
            R = s.radius
            sgn = math.copysign(1.0, R)
            conv = np.zeros(len(ai), dtype=bool)
            for _ in range(max_iter):
                live = ok & ~conv
                if not live.any():
                    break
                p = ao + t[:, None] * ad
                r2 = p[:, 0] ** 2 + p[:, 1] ** 2
                rad = R * R - r2
                exited = live & (rad <= 0)
                ok &= ~exited
                live &= ~exited
                sqr = np.sqrt(np.where(rad > 0, rad, 1.0))
                sag = R - sgn * sqr
                f = p[:, 2] - s.vertex_z - sag
                conv |= live & (np.abs(f) < tol)
                live &= ~conv
                fp = ad[:, 2] - sgn * (p[:, 0] * ad[:, 0] + p[:, 1] * ad[:, 1]) / sqr
                stalled = live & (fp == 0)
                ok &= ~stalled
                live &= ~stalled
                t = np.where(live, t - f / np.where(fp != 0, fp, 1.0), t)
            ok &= conv
            p = ao + t[:, None] * ad
            r2 = p[:, 0] ** 2 + p[:, 1] ** 2
            sa = s.semi_aperture
            sag_max = s.sag_depth
            dz = p[:, 2] - s.vertex_z
            if R > 0:
                on_cap = (dz >= -1e-9) & (dz <= sag_max + 1e-9)
            else:
                on_cap = (dz >= -sag_max - 1e-9) & (dz <= 1e-9)
            ok &= (t > MIN_HIT_DISTANCE) & (r2 <= (sa + 1e-9) ** 2) & on_cap

            missed = ~ok
            status[ai[missed]] = TraceStatus.MISSED.value
            surf_idx[ai[missed]] = idx
            alive[ai[missed]] = False

            center = np.array([0.0, 0.0, s.vertex_z + R])
            normal = p - center
            normal /= np.linalg.norm(normal, axis=1, keepdims=True)
            flip = np.einsum("ij,ij->i", normal, ad) > 0
            normal[flip] = -normal[flip]
        else:
            ok &= t > MIN_HIT_DISTANCE
            p = ao + t[:, None] * ad
            missed = ~ok
            status[ai[missed]] = TraceStatus.MISSED.value
            surf_idx[ai[missed]] = idx
            alive[ai[missed]] = False

            r2 = p[:, 0] ** 2 + p[:, 1] ** 2
            vign = ok & (r2 > s.semi_aperture**2)
            status[ai[vign]] = TraceStatus.VIGNETTED.value
            surf_idx[ai[vign]] = idx
            alive[ai[vign]] = False
            ok &= ~vign

            normal = np.zeros_like(p)
            normal[:, 2] = np.where(ad[:, 2] > 0, -1.0, 1.0)

        o[ai[ok]] = p[ok]
        if s.kind is SurfaceKind.STOP:
            continue

        mu = n_cur / s.index_after
        cos_i = -np.einsum("ij,ij->i", normal, ad)
        k = 1.0 - mu * mu * (1.0 - cos_i * cos_i)
        tir = ok & (k < 0)
        status[ai[tir]] = TraceStatus.TIR.value
        surf_idx[ai[tir]] = idx
        alive[ai[tir]] = False
        ok &= ~tir

        coeff = mu * cos_i - np.sqrt(np.where(k > 0, k, 0.0))
        d_new = mu * ad + coeff[:, None] * normal
        d[ai[ok]] = d_new[ok]
        n_cur = s.index_after

    return o, d, status, surf_idx


def propagate_batch(origins: np.ndarray, directions: np.ndarray, plane_z: float) -> np.ndarray:
    """Vectorized free-space transport to a plane; rows with direction_z below
    the forward threshold come back NaN."""
    dz = directions[:, 2]
    bad = dz <= MIN_FORWARD_DZ
    t = (plane_z - origins[:, 2]) / np.where(bad, 1.0, dz)
    out = origins[:, :2] + t[:, None] * directions[:, :2]
    out[bad] = np.nan
    return out


def paraxial_efl(system: OpticalSystem) -> float:
    """Effective focal length from composed 2x2 paraxial matrices.

    Uses the reduced (y, n*u) convention: refraction [[1,0],[-P,1]] with
    power P = (n2-n1)/R, transfer [[1, t/n],[0,1]]. The EFL is -1/C of the
    composed matrix. Raises for afocal systems and for systems containing
    stop surfaces (they carry no paraxial meaning here).
    """
    m = np.eye(2)
    n_cur = system.index_before_first
    z_prev = None
    for s in system.surfaces:
        if s.kind is SurfaceKind.STOP:
            raise ValueError("paraxial analysis expects refracting surfaces only")
        if z_prev is not None:
            gap = np.array([[1.0, (s.vertex_z - z_prev) / n_cur], [0.0, 1.0]])
            m = gap @ m
        curv = 1.0 / s.radius if s.kind is SurfaceKind.SPHERICAL else 0.0
        power = (s.index_after - n_cur) * curv
        m = np.array([[1.0, 0.0], [-power, 1.0]]) @ m
        n_cur = s.index_after
        z_prev = s.vertex_z
    c = m[1, 0]
    if abs(c) < 1e-12:
        raise ValueError("afocal system has no effective focal length")
    return -1.0 / c


def design_singlet(
    focal: float,
    aperture: float,
    index: float = 1.5168,
    center_thickness: float = 8.0,
    source_distance: float | None = None,
    target_gap: float = 1.0,
) -> OpticalSystem:
    """Design a symmetric biconvex singlet (R1 = -R2 = R) with the requested
    effective focal length and clear aperture.

    R is found by bisection on the thick-lens power
    1/f = (n-1)(2/R - (n-1) t / (n R^2)), constrained to |R| > aperture/2 so
    the caps are well defined. The source plane defaults to one focal length
    before the front vertex; the target plane sits ``target_gap`` past the
    rear vertex.
    """
    if focal <= 0 or aperture <= 0 or index <= 1 or center_thickness <= 0:
        raise ValueError("focal, aperture, center_thickness must be positive and index > 1")

    def power_err(r: float) -> float:
        return (index - 1.0) * (2.0 / r - (index - 1.0) * center_thickness / (index * r * r)) - 1.0 / focal

    lo = aperture / 2.0 * (1.0 + 1e-9)
    hi = 1e7
    if power_err(lo) < 0 or power_err(hi) > 0:
        raise ValueError(
            f"no biconvex radius with |R| > aperture/2 = {aperture / 2} reaches focal length {focal}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if power_err(mid) > 0:
            lo = mid
        else:
            hi = mid
    radius = 0.5 * (lo + hi)

    semi = aperture / 2.0
    surfaces = (
        Surface(SurfaceKind.SPHERICAL, vertex_z=0.0, semi_aperture=semi, index_after=index, radius=radius),
        Surface(SurfaceKind.SPHERICAL, vertex_z=center_thickness, semi_aperture=semi, index_after=1.0, radius=-radius),
    )
    if source_distance is None:
        source_distance = focal
    system = OpticalSystem(
        surfaces=surfaces,
        source_z=-float(source_distance),
        target_z=center_thickness + target_gap,
    )
    efl = paraxial_efl(system)
    if abs(efl - focal) > 1e-3 * focal:
        raise ValueError(f"designed EFL {efl} deviates from requested {focal} by more than 0.1%")
    return system
