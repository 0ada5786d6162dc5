"""Geometric optics in a two-layer medium.

The background coefficient is ``gamma_plus`` above the plane ``x3 = 0`` and
``gamma_minus`` below it.  Travel times are measured with local speed
``sqrt(gamma)``.  A ray from ``x`` (lower layer) to ``y`` (upper layer)
crosses the interface at a point ``z'`` that minimises the travel time; the
minimum is the optical distance ``l(x, y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, PreconditionError

__all__ = [
    "as_point3",
    "LayeredMedium",
    "SourceBall",
    "ObstacleSpec",
    "SnellSolution",
    "OpticalDistance",
    "EnclosureRegion",
    "path_length",
    "snell_point",
    "snell_parameter",
    "optical_distance",
    "optical_distance_many",
    "hessian_closed_form",
    "optical_distance_sets",
    "enclosure_region",
    "in_enclosure",
    "fibonacci_sphere",
]


def as_point3(p, name: str = "point") -> np.ndarray:
    """Return ``p`` as a finite float array of shape ``(3,)``."""
    a = np.asarray(p, dtype=float)
    if a.shape != (3,):
        raise PreconditionError(f"{name} must have 3 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} has non-finite components: {a}")
    return a


@dataclass(frozen=True)
class LayeredMedium:
    """Piecewise constant coefficient with a planar interface at ``x3 = 0``.

    Parameters
    ----------
    gamma_plus : float
        Coefficient in the upper layer ``x3 > 0``.
    gamma_minus : float
        Coefficient in the lower layer ``x3 < 0``.

    Notes
    -----
    The refracting configuration of interest has ``gamma_plus < gamma_minus``.
    Equal values are accepted because the homogeneous medium is a useful
    degenerate check.  ``gamma_plus > gamma_minus`` produces total internal
    reflection and is rejected.
    """

    gamma_plus: float
    gamma_minus: float

    def __post_init__(self):
        gp, gm = float(self.gamma_plus), float(self.gamma_minus)
        if not (np.isfinite(gp) and np.isfinite(gm)) or gp <= 0.0 or gm <= 0.0:
            raise PreconditionError(
                f"coefficients must be positive, got gamma_plus={gp}, gamma_minus={gm}"
            )
        if gp > gm:
            raise PreconditionError(
                f"gamma_plus={gp} > gamma_minus={gm} (total reflection) is not supported"
            )
        object.__setattr__(self, "gamma_plus", gp)
        object.__setattr__(self, "gamma_minus", gm)

    @property
    def a0(self) -> float:
        """Refraction index ratio ``sqrt(gamma_minus / gamma_plus)``."""
        return float(np.sqrt(self.gamma_minus / self.gamma_plus))

    @property
    def is_refracting(self) -> bool:
        return self.gamma_plus < self.gamma_minus

    @property
    def speed_plus(self) -> float:
        return float(np.sqrt(self.gamma_plus))

    @property
    def speed_minus(self) -> float:
        return float(np.sqrt(self.gamma_minus))

    @property
    def max_gamma(self) -> float:
        return max(self.gamma_plus, self.gamma_minus)

    def gamma_at(self, x3):
        """Background coefficient at height ``x3`` (upper value on the plane)."""
        return np.where(np.asarray(x3) >= 0.0, self.gamma_plus, self.gamma_minus)


@dataclass(frozen=True)
class SourceBall:
    """Ball ``B`` carrying the initial velocity ``f``.

    Parameters
    ----------
    center : array_like
        Centre ``p`` with ``p3 > radius``.
    radius : float
        Radius ``eta``.
    amplitude : float
        Constant value ``c0`` of ``f`` on ``B``; nonzero.
    taper : bool
        If true the discretised ``f`` rolls off with a cosine over two cells
        centred on the sphere.
    """

    center: np.ndarray
    radius: float
    amplitude: float = 1.0
    taper: bool = True

    def __post_init__(self):
        c = as_point3(self.center, "source center")
        object.__setattr__(self, "center", c)
        r = float(self.radius)
        if not r > 0.0:
            raise PreconditionError(f"source radius must be positive, got {r}")
        if not c[2] - r > 0.0:
            raise PreconditionError(
                f"source ball must lie in the upper layer: p3 - eta = {c[2] - r} <= 0"
            )
        a = float(self.amplitude)
        if a == 0.0 or not np.isfinite(a):
            raise PreconditionError("source amplitude must be finite and nonzero")
        object.__setattr__(self, "radius", r)
        object.__setattr__(self, "amplitude", a)

    def profile(self, points: np.ndarray, h: Optional[float] = None) -> np.ndarray:
        """Values of ``f`` at ``points`` (shape ``(..., 3)``).

        With ``h`` given and ``taper`` on, the rim is a cosine ramp over
        ``[eta - h, eta + h]``.
        """
        r = np.linalg.norm(np.asarray(points, dtype=float) - self.center, axis=-1)
        if h is None or not self.taper:
            return np.where(r <= self.radius, self.amplitude, 0.0)
        inner = self.radius - h
        ramp = 0.5 * (1.0 + np.cos(np.pi * (r - inner) / (2.0 * h)))
        prof = np.where(r < inner, 1.0, np.where(r > self.radius + h, 0.0, ramp))
        return self.amplitude * prof


def fibonacci_sphere(n: int) -> np.ndarray:
    """Nearly uniform unit vectors, shape ``(n, 3)``."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


@dataclass(frozen=True)
class ObstacleSpec:
    """Penetrable inclusion ``D`` with scalar contrast ``c``.

    Parameters
    ----------
    shape : {"ball", "box"}
    params : tuple
        ``(center, radius)`` for a ball, ``(lo, hi)`` for an axis aligned box.
    contrast : float
        ``c``; the coefficient inside ``D`` is ``gamma_minus + c``.
        ``c < 0`` is condition A1, ``c > 0`` is condition A2.
    n_boundary : int
        Number of boundary samples generated when ``boundary_samples`` is not
        supplied.
    boundary_samples : ndarray, optional
        Explicit samples on the boundary, shape ``(m, 3)``.
    """

    shape: str
    params: tuple
    contrast: float = 0.0
    n_boundary: int = 4096
    boundary_samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.shape == "ball":
            c = as_point3(self.params[0], "obstacle center")
            r = float(self.params[1])
            if not r > 0.0:
                raise PreconditionError(f"obstacle radius must be positive, got {r}")
            if not c[2] + r < 0.0:
                raise PreconditionError("obstacle must lie in the lower layer (x3 < 0)")
            object.__setattr__(self, "params", (c, r))
        elif self.shape == "box":
            lo = as_point3(self.params[0], "box lo")
            hi = as_point3(self.params[1], "box hi")
            if np.any(hi <= lo):
                raise PreconditionError("box requires hi > lo componentwise")
            if not hi[2] < 0.0:
                raise PreconditionError("obstacle must lie in the lower layer (x3 < 0)")
            object.__setattr__(self, "params", (lo, hi))
        else:
            raise PreconditionError(f"unknown obstacle shape {self.shape!r}")
        object.__setattr__(self, "contrast", float(self.contrast))
        if self.boundary_samples is None:
            pts = self._generate_boundary(int(self.n_boundary)) if self.n_boundary > 0 else np.zeros((0, 3))
        else:
            pts = np.asarray(self.boundary_samples, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "boundary_samples", pts)

    # geometry helpers
    @property
    def condition(self) -> str:
        if self.contrast < 0:
            return "A1"
        if self.contrast > 0:
            return "A2"
        return "none"

    def check_ellipticity(self, medium: LayeredMedium) -> None:
        if not medium.gamma_minus + self.contrast > 0.0:
            raise PreconditionError(
                f"gamma_minus + c = {medium.gamma_minus + self.contrast} must be positive"
            )

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.shape == "ball":
            c, r = self.params
            return c - r, c + r
        return self.params

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if self.shape == "ball":
            c, r = self.params
            return np.sum((p - c) ** 2, axis=-1) < r * r
        lo, hi = self.params
        return np.all((p > lo) & (p < hi), axis=-1)

    def volume(self) -> float:
        if self.shape == "ball":
            return 4.0 / 3.0 * np.pi * self.params[1] ** 3
        lo, hi = self.params
        return float(np.prod(hi - lo))

    def volume_samples(self, n_per_axis: int = 24) -> np.ndarray:
        """Regular lattice of points strictly inside ``D``."""
        lo, hi = self.bounding_box()
        axes = [lo[a] + (np.arange(n_per_axis) + 0.5) * (hi[a] - lo[a]) / n_per_axis for a in range(3)]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        return g[self.contains(g)]

    def outward_normal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.shape == "ball":
            c, _ = self.params
            d = x - c
            return d / np.linalg.norm(d)
        lo, hi = self.params
        dist = np.concatenate([x - lo, hi - x])
        k = int(np.argmin(np.abs(dist)))
        n = np.zeros(3)
        n[k % 3] = -1.0 if k < 3 else 1.0
        return n

    def _generate_boundary(self, n: int) -> np.ndarray:
        if self.shape == "ball":
            c, r = self.params
            return c + r * fibonacci_sphere(n)
        lo, hi = self.params
        ext = hi - lo
        areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
        pts = []
        per_area = n / (2.0 * areas.sum())
        for a in range(3):
            b, c = [k for k in range(3) if k != a]
            nb = max(2, int(round(np.sqrt(per_area * areas[a]) * ext[b] / np.sqrt(areas[a]))))
            nc = max(2, int(round(np.sqrt(per_area * areas[a]) * ext[c] / np.sqrt(areas[a]))))
            ub = lo[b] + (np.arange(nb) + 0.5) * ext[b] / nb
            uc = lo[c] + (np.arange(nc) + 0.5) * ext[c] / nc
            B, C = np.meshgrid(ub, uc, indexing="ij")
            for side in (lo[a], hi[a]):
                p = np.empty((B.size, 3))
                p[:, a] = side
                p[:, b] = B.ravel()
                p[:, c] = C.ravel()
                pts.append(p)
        return np.concatenate(pts)

    def local_chart(self, x0, half_width: float) -> tuple[Callable, tuple, tuple]:
        """Boundary chart around ``x0``: ``(chart(s, t), s_range, t_range)``."""
        x0 = np.asarray(x0, dtype=float)
        if self.shape == "ball":
            c, r = self.params
            n0 = (x0 - c) / np.linalg.norm(x0 - c)
            e1 = np.cross(n0, [1.0, 0.0, 0.0] if abs(n0[0]) < 0.9 else [0.0, 1.0, 0.0])
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(n0, e1)

            def chart(s, t):
                d = n0 + s * e1 + t * e2
                return c + r * d / np.linalg.norm(d)

            w = half_width / r
            return chart, (-w, w), (-w, w)
        lo, hi = self.params
        n = self.outward_normal(x0)
        a = int(np.argmax(np.abs(n)))
        b, cax = [k for k in range(3) if k != a]

        def chart(s, t):
            p = x0.copy()
            p[b] = s
            p[cax] = t
            return p

        sb = (max(lo[b], x0[b] - half_width), min(hi[b], x0[b] + half_width))
        tc = (max(lo[cax], x0[cax] - half_width), min(hi[cax], x0[cax] + half_width))
        return chart, sb, tc


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if not x[2] < 0.0:
        raise PreconditionError(f"x must lie in the lower layer, got x3 = {x[2]}")
    if not y[2] > 0.0:
        raise PreconditionError(f"y must lie in the upper layer, got y3 = {y[2]}")


def path_length(x, y, z_prime, medium: LayeredMedium) -> float:
    """Travel time along the broken ray ``x -> (z', 0) -> y``."""
    x = as_point3(x, "x")
    y = as_point3(y, "y")
    _check_pair(x, y)
    z = np.array([z_prime[0], z_prime[1], 0.0], dtype=float)
    return float(
        np.linalg.norm(z - x) / np.sqrt(medium.gamma_minus)
        + np.linalg.norm(z - y) / np.sqrt(medium.gamma_plus)
    )


def snell_parameter(L, a, b, medium: LayeredMedium, tol: float = 1e-13, max_iter: int = 200):
    """Solve the one dimensional Snell problem, vectorised.

    For a horizontal separation ``L``, depth ``a = |x3|`` and height
    ``b = y3``, minimise ``sqrt(s^2 + a^2)/c_- + sqrt((L - s)^2 + b^2)/c_+``
    over ``s`` in ``[0, L]``.  The objective is strictly convex so a Newton
    iteration safeguarded by bisection converges globally.

    Returns
    -------
    s : ndarray
        Distance of the crossing point from ``x'`` along ``y' - x'``.
    """
    L, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (L, a, b)))
    cm = 1.0 / np.sqrt(medium.gamma_minus)
    cp = 1.0 / np.sqrt(medium.gamma_plus)
    lo = np.zeros_like(L)
    hi = L.copy()
    # straight-line crossing is a good start
    s = L * a / (a + b)
    for _ in range(max_iter):
        rm = np.hypot(s, a)
        rp = np.hypot(L - s, b)
        g = cm * s / rm - cp * (L - s) / rp
        done = (np.abs(g) <= tol) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(L, 1.0))
        if np.all(done):
            break
        gp = cm * a * a / rm**3 + cp * b * b / rp**3
        lo = np.where(g < 0, s, lo)
        hi = np.where(g > 0, s, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            sn = s - g / gp
        bad = ~np.isfinite(sn) | (sn <= lo) | (sn >= hi)
        sn = np.where(bad, 0.5 * (lo + hi), sn)
        s = np.where(done, s, sn)
    return np.where(L > 0, s, 0.0)


@dataclass(frozen=True)
class SnellSolution:
    """Refraction point and second order data of the optical path.

    Attributes
    ----------
    z_prime : ndarray, shape (2,)
        Crossing point on the interface.
    l_value : float
        Optical distance ``l(x, y)``.
    theta_minus, theta_plus : float
        Angles of the two ray legs to the vertical.
    hessian : ndarray, shape (2, 2)
        Hessian of the path length in ``z'`` at the minimiser.
    det_h, eig_tangent, eig_perp : float
        Determinant and eigenvalues of ``hessian`` along and across the
        horizontal segment ``[x', y']``.
    """

    x: np.ndarray
    y: np.ndarray
    z_prime: np.ndarray
    l_value: float
    theta_minus: float
    theta_plus: float
    hessian: np.ndarray
    det_h: float
    eig_tangent: float
    eig_perp: float
    r_minus: float
    r_plus: float
    medium: LayeredMedium = field(repr=False)

    @property
    def z_tilde(self) -> np.ndarray:
        return np.array([self.z_prime[0], self.z_prime[1], 0.0])

    @property
    def snell_residual(self) -> float:
        return float(
            np.sin(self.theta_minus) / np.sqrt(self.medium.gamma_minus)
            - np.sin(self.theta_plus) / np.sqrt(self.medium.gamma_plus)
        )


def hessian_closed_form(x, y, snell: SnellSolution | np.ndarray, medium: LayeredMedium):
    """Hessian of ``z' -> l_{x,y}(z')`` from the explicit formula.

    Each leg contributes ``(I - u u^T) / (sqrt(gamma) r)`` where ``u`` is the
    horizontal part of its unit direction and ``r`` its length.

    Returns
    -------
    H : ndarray, shape (2, 2)
    eig_tangent : float
        Eigenvalue along ``y' - x'``:
        ``x3^2/(sqrt(g-) r-^3) + y3^2/(sqrt(g+) r+^3)``.
    eig_perp : float
        Eigenvalue across: ``1/(sqrt(g-) r-) + 1/(sqrt(g+) r+)``.
    det : float
        ``eig_tangent * eig_perp``.
    """
    x = as_point3(x, "x")
    y = as_point3(y, "y")
    zp = snell.z_prime if isinstance(snell, SnellSolution) else np.asarray(snell, dtype=float)
    z = np.array([zp[0], zp[1], 0.0])
    dm = z - x
    dp = z - y
    rm = np.linalg.norm(dm)
    rp = np.linalg.norm(dp)
    sm = np.sqrt(medium.gamma_minus)
    sp = np.sqrt(medium.gamma_plus)
    um = dm[:2] / rm
    up = dp[:2] / rp
    eye = np.eye(2)
    H = (eye - np.outer(um, um)) / (sm * rm) + (eye - np.outer(up, up)) / (sp * rp)
    eig_t = x[2] ** 2 / (sm * rm**3) + y[2] ** 2 / (sp * rp**3)
    eig_p = 1.0 / (sm * rm) + 1.0 / (sp * rp)
    return H, float(eig_t), float(eig_p), float(eig_t * eig_p)


def snell_point(x, y, medium: LayeredMedium, tol: float = 1e-13) -> SnellSolution:
    """Minimiser of the travel time over interface points.

    The minimiser lies on the horizontal segment ``[x', y']`` so the search
    is one dimensional.  When ``x' = y'`` the answer is ``z' = x'``.
    """
    x = as_point3(x, "x")
    y = as_point3(y, "y")
    _check_pair(x, y)
    d = y[:2] - x[:2]
    L = float(np.hypot(d[0], d[1]))
    if L == 0.0:
        zp = x[:2].copy()
    else:
        s = float(snell_parameter(L, -x[2], y[2], medium, tol=tol))
        zp = x[:2] + (s / L) * d
    z = np.array([zp[0], zp[1], 0.0])
    rm = float(np.linalg.norm(z - x))
    rp = float(np.linalg.norm(z - y))
    th_m = float(np.arctan2(np.linalg.norm(zp - x[:2]), -x[2]))
    th_p = float(np.arctan2(np.linalg.norm(zp - y[:2]), y[2]))
    lval = rm / np.sqrt(medium.gamma_minus) + rp / np.sqrt(medium.gamma_plus)
    H, et, ep, det = hessian_closed_form(x, y, zp, medium)
    return SnellSolution(
        x=x, y=y, z_prime=zp, l_value=float(lval), theta_minus=th_m, theta_plus=th_p,
        hessian=H, det_h=det, eig_tangent=et, eig_perp=ep, r_minus=rm, r_plus=rp, medium=medium,
    )


def optical_distance(x, y, medium: LayeredMedium) -> float:
    """``l(x, y)`` for a single pair."""
    return snell_point(x, y, medium).l_value


def optical_distance_many(xs, y, medium: LayeredMedium, return_z: bool = False):
    """Vectorised ``l(x, y)`` for many lower points ``xs`` and one ``y``.

    Parameters
    ----------
    xs : array_like, shape (n, 3)
        Points with ``x3 < 0``.
    y : array_like, shape (3,) or (n, 3)
        Upper point(s) with ``y3 > 0``.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    y = np.asarray(y, dtype=float)
    ys = np.broadcast_to(y, xs.shape)
    if np.any(xs[:, 2] >= 0) or np.any(ys[:, 2] <= 0):
        raise PreconditionError("optical distance requires x3 < 0 < y3")
    d = ys[:, :2] - xs[:, :2]
    L = np.hypot(d[:, 0], d[:, 1])
    s = snell_parameter(L, -xs[:, 2], ys[:, 2], medium)
    lval = np.hypot(s, xs[:, 2]) / np.sqrt(medium.gamma_minus) + np.hypot(L - s, ys[:, 2]) / np.sqrt(
        medium.gamma_plus
    )
    if not return_z:
        return lval
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(L > 0, s / np.where(L > 0, L, 1.0), 0.0)
    return lval, xs[:, :2] + frac[:, None] * d


def _golden(fn: Callable[[float], float], a: float, b: float, tol: float = 1e-12, max_iter: int = 200):
    """Golden-section minimisation of a unimodal function on ``[a, b]``."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


@dataclass(frozen=True)
class OpticalDistance:
    """Set level optical distances and the pair achieving them."""

    l_DB: float
    l_Dp: float
    x0: np.ndarray
    y0: np.ndarray
    z0: np.ndarray

    @property
    def threshold_time(self) -> float:
        """Round trip time ``2 l(D, B)``."""
        return 2.0 * self.l_DB


def optical_distance_sets(obstacle: ObstacleSpec, source: SourceBall, medium: LayeredMedium,
                          polish: bool = True) -> OpticalDistance:
    """Optical distance from ``D`` to the centre of ``B`` and to ``B`` itself.

    The minimum of ``l(x, p)`` over ``D`` is attained on the boundary, so it
    is sampled on ``obstacle.boundary_samples`` and then refined by cyclic
    golden-section search in a local boundary chart.
    """
    pts = obstacle.boundary_samples
    if pts is None or len(pts) == 0:
        raise ConfigurationError("obstacle has no boundary samples")
    p = source.center
    lv = optical_distance_many(pts, p, medium)
    k = int(np.argmin(lv))
    x0 = pts[k].copy()
    best = float(lv[k])
    if polish:
        # local spacing of the sample set bounds the search window
        spacing = np.sqrt(_boundary_area(obstacle) / len(pts))
        chart, (s0, s1), (t0, t1) = obstacle.local_chart(x0, 3.0 * spacing)
        fval = lambda s, t: float(optical_distance_many(chart(s, t)[None, :], p, medium)[0])
        if obstacle.shape == "ball":
            s, t = 0.0, 0.0
        else:
            s, t = 0.5 * (s0 + s1), 0.5 * (t0 + t1)
        for _ in range(60):
            s_new = _golden(lambda u: fval(u, t), s0, s1)
            t_new = _golden(lambda u: fval(s_new, u), t0, t1)
            moved = abs(s_new - s) + abs(t_new - t)
            s, t = s_new, t_new
            if moved < 1e-12:
                break
        cand = chart(s, t)
        val = fval(s, t)
        if val <= best:
            x0, best = cand, val
    lval, z = optical_distance_many(x0[None, :], p, medium, return_z=True)
    z0 = z[0]
    zt = np.array([z0[0], z0[1], 0.0])
    u = zt - p
    y0 = p + source.radius * u / np.linalg.norm(u)
    l_Dp = float(lval[0])
    l_DB = float(l_Dp - source.radius / np.sqrt(medium.gamma_plus))
    return OpticalDistance(l_DB=l_DB, l_Dp=l_Dp, x0=x0, y0=y0, z0=z0)


def _boundary_area(obstacle: ObstacleSpec) -> float:
    if obstacle.shape == "ball":
        return 4.0 * np.pi * obstacle.params[1] ** 2
    e = obstacle.params[1] - obstacle.params[0]
    return 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2])


@dataclass(frozen=True)
class EnclosureRegion:
    """Boolean lattice marking points optically farther than a threshold."""

    axes: tuple
    mask: np.ndarray
    threshold: float

    def lookup(self, points) -> np.ndarray:
        """Mask value at the lattice node nearest to each point."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        idx = []
        for a in range(3):
            ax = self.axes[a]
            step = ax[1] - ax[0] if len(ax) > 1 else 1.0
            i = np.clip(np.rint((p[:, a] - ax[0]) / step).astype(int), 0, len(ax) - 1)
            idx.append(i)
        return self.mask[idx[0], idx[1], idx[2]]

    def coverage(self, points) -> float:
        """Fraction of ``points`` that fall in marked cells."""
        m = self.lookup(points)
        return float(np.mean(m)) if m.size else float("nan")

    def nodes(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def obstacle_coverage(self, obstacle: "ObstacleSpec") -> tuple[float, int]:
        """Fraction of lattice nodes inside ``obstacle`` that are marked."""
        inside = obstacle.contains(self.nodes())
        n = int(inside.sum())
        return (float(self.mask[inside].mean()) if n else float("nan")), n


def enclosure_region(l_DB: float, source: SourceBall, medium: LayeredMedium, box, n: int = 64
                     ) -> EnclosureRegion:
    """Mark lattice points ``x`` with ``l(x, p) > l_DB + eta/sqrt(gamma_plus)``.

    Parameters
    ----------
    l_DB : float
        Optical distance from the obstacle to the source ball (true or
        estimated).
    box : tuple of array_like
        ``(lo, hi)`` corners of the query box, entirely in ``x3 < 0``.
    n : int or sequence of int
        Lattice nodes per axis.
    """
    if not l_DB > 0:
        raise PreconditionError(f"l_DB must be positive, got {l_DB}")
    lo = as_point3(box[0], "box lo")
    hi = as_point3(box[1], "box hi")
    if not hi[2] < 0.0:
        raise PreconditionError("query box must lie in x3 < 0")
    ns = np.broadcast_to(np.asarray(n, dtype=int), (3,))
    axes = tuple(np.linspace(lo[a], hi[a], ns[a]) for a in range(3))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    thr = l_DB + source.radius / np.sqrt(medium.gamma_plus)
    mask = in_enclosure(grid, l_DB, source, medium)
    return EnclosureRegion(axes=axes, mask=mask.reshape(tuple(ns)), threshold=float(thr))


def in_enclosure(points, l_DB: float, source: SourceBall, medium: LayeredMedium) -> np.ndarray:
    """``l(x, p) > l_DB + eta/sqrt(gamma_plus)`` evaluated at each point."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    thr = l_DB + source.radius / np.sqrt(medium.gamma_plus)
    return optical_distance_many(pts, source.center, medium) > thr


def lower_eigenvalue_bound(medium: LayeredMedium, horizontal_diameter: float, clearance: float) -> float:
    """Lower bound on the smallest Hessian eigenvalue over a configuration.

    Valid whenever ``|x' - y'| <= L`` and ``A <= |x3|, y3 <= 1/A``.  Each leg
    contributes at least ``t^2 / (sqrt(gamma) (L^2 + t^2)^(3/2))`` with ``t``
    its height; that function of ``t`` is unimodal so its minimum over
    ``[A, 1/A]`` sits at an endpoint.
    """
    L, A = float(horizontal_diameter), float(clearance)
    g = lambda t: t * t / (L * L + t * t) ** 1.5
    m = min(g(A), g(1.0 / A))
    return (1.0 / np.sqrt(medium.gamma_minus) + 1.0 / np.sqrt(medium.gamma_plus)) * m


def naive_eigenvalue_bound(medium: LayeredMedium, horizontal_diameter: float, clearance: float) -> float:
    """The sharper looking bound ``(1/sqrt(g-) + 1/sqrt(g+)) A / (L^2 + A^2)``.

    Kept for comparison only: it can exceed the true smallest eigenvalue,
    e.g. for vertical rays when ``L^2 + A^2 < 1``.
    """
    L, A = float(horizontal_diameter), float(clearance)
    return (1.0 / np.sqrt(medium.gamma_minus) + 1.0 / np.sqrt(medium.gamma_plus)) * A / (L * L + A * A)
