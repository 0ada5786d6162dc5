"""Brute force validators.

Each check returns an :class:`OracleReport` that records its inputs, so a
report can be regenerated from its own parameters.  The Snell and optical
distance oracles use their own path length evaluation and minimisation
and share nothing with :mod:`layered_enclosure.geometry` beyond plain
point arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .elliptic import elliptic_grid, gradient_energy, solve_screened
from .errors import PreconditionError, ResolutionError
from .forward import ReceiverRecord, face_coefficients, simulate
from .geometry import LayeredMedium
from .indicator import residual_indicator
from .scenario import Scenario

__all__ = [
    "OracleReport",
    "brute_force_snell",
    "fd_hessian",
    "order_fit",
    "brute_laplace_2d",
    "gradient_norm_bracket",
    "lemma11_bracket",
    "minimizer_structure_check",
    "write_reports",
]


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class OracleReport:
    """Outcome of one check together with everything needed to rerun it."""

    name: str
    params: dict
    measured: object
    reference: object
    tolerance: object
    passed: bool
    seed: Optional[int] = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def write_reports(reports: Sequence[OracleReport], path, config_hash: str = "") -> None:
    """JSON lines; every line carries ``config_hash``."""
    with open(path, "w") as fh:
        for r in reports:
            d = r.to_dict()
            d["config_hash"] = config_hash
            fh.write(json.dumps(d, sort_keys=True) + "\n")


# Snell point by exhaustive search


def _travel(x, y, z2, gm, gp):
    """Travel time through interface points ``z2`` (shape (..., 2))."""
    dm = np.sqrt((z2[..., 0] - x[0]) ** 2 + (z2[..., 1] - x[1]) ** 2 + x[2] ** 2)
    dp = np.sqrt((z2[..., 0] - y[0]) ** 2 + (z2[..., 1] - y[1]) ** 2 + y[2] ** 2)
    return dm / np.sqrt(gm) + dp / np.sqrt(gp)


def brute_force_snell(x, y, medium: LayeredMedium, grid_step: Optional[float] = None,
                      scan_radius: Optional[float] = None, scan_n: int = 201):
    """Interface point of least travel time by dense search.

    A uniform scan along the horizontal segment from ``x'`` to ``y'`` is
    refined by repeated zooming, then a square scan of ``scan_n**2``
    points around the result checks that no off-segment point does better.

    Parameters
    ----------
    grid_step : float, optional
        Initial spacing along the segment; at most ``1e-3 |x' - y'|``
        (``1e-4`` absolute when ``x' = y'``).

    Returns
    -------
    z_prime : ndarray, shape (2,)
    l : float
    off_segment_gain : float
        ``l`` minus the smallest travel time found by the off-segment scan;
        positive values mean the scan found a better point.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    gm, gp = medium.gamma_minus, medium.gamma_plus
    xp, yp = x[:2], y[:2]
    d = float(np.hypot(*(yp - xp)))
    limit = 1e-3 * d if d > 0 else 1e-4
    step = limit if grid_step is None else float(grid_step)
    if step > limit * (1 + 1e-12):
        raise PreconditionError(f"grid_step {step} exceeds {limit}")
    if d > 0:
        e = (yp - xp) / d
        n = int(np.ceil(d / step)) + 1
        s = np.linspace(0.0, d, n)
        vals = _travel(x, y, xp[None, :] + s[:, None] * e[None, :], gm, gp)
        k = int(np.argmin(vals))
        c, half = s[k], s[1] - s[0]
        while half > 1e-15 * max(1.0, d):
            s = np.linspace(max(0.0, c - 2 * half), min(d, c + 2 * half), 41)
            vals = _travel(x, y, xp[None, :] + s[:, None] * e[None, :], gm, gp)
            k = int(np.argmin(vals))
            c, half = s[k], (s[1] - s[0])
            if half == 0.0:
                break
        z = xp + c * e
    else:
        z = xp.copy()
    lval = float(_travel(x, y, z, gm, gp))
    R = scan_radius if scan_radius is not None else 0.05 * (d + abs(x[2]) + abs(y[2]))
    g = np.linspace(-R, R, scan_n)
    zz = np.stack(np.meshgrid(z[0] + g, z[1] + g, indexing="ij"), axis=-1)
    scan = _travel(x, y, zz, gm, gp)
    # second, finer scan catches improvements below the coarse spacing
    g2 = np.linspace(-R / 50, R / 50, scan_n)
    zz2 = np.stack(np.meshgrid(z[0] + g2, z[1] + g2, indexing="ij"), axis=-1)
    gain = lval - min(float(scan.min()), float(_travel(x, y, zz2, gm, gp).min()))
    return z, lval, gain


def fd_hessian(x, y, z2, medium: LayeredMedium, step: float = 1e-3) -> np.ndarray:
    """Central difference Hessian of the travel time in the interface variable,
    with one Richardson extrapolation step."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    z2 = np.asarray(z2, float)
    gm, gp = medium.gamma_minus, medium.gamma_plus
    f = lambda z: float(_travel(x, y, z, gm, gp))

    def central(hs):
        H = np.zeros((2, 2))
        e = np.eye(2) * hs
        for i in range(2):
            for j in range(2):
                H[i, j] = (f(z2 + e[i] + e[j]) - f(z2 + e[i] - e[j]) - f(z2 - e[i] + e[j])
                           + f(z2 - e[i] - e[j])) / (4 * hs * hs)
        return H

    return (4.0 * central(0.5 * step) - central(step)) / 3.0


def order_fit(taus, remainders) -> float:
    """Decay order ``p`` in ``|remainder| ~ tau^(-p)`` by least squares in log space."""
    lt = np.log(np.asarray(taus, float))
    lr = np.log(np.abs(np.asarray(remainders, float)))
    return float(-np.polyfit(lt, lr, 1)[0])


def brute_laplace_2d(phase: Callable, amplitude: Callable, center, tau: float,
                     half_width: float, n: int = 801) -> float:
    """``int exp(-tau phase) amplitude`` over a square by the composite Simpson rule."""
    if n % 2 == 0:
        n += 1
    c = np.asarray(center, float)
    s = np.linspace(-half_width, half_width, n)
    w = np.ones(n)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= (s[1] - s[0]) / 3.0
    Z = np.stack(np.meshgrid(c[0] + s, c[1] + s, indexing="ij"), axis=-1)
    ph = phase(Z)
    p0 = float(phase(c[None, None, :])[0, 0])
    vals = np.exp(-tau * (ph - p0)) * amplitude(Z)
    return float(np.exp(-tau * p0) * (w[:, None] * w[None, :] * vals).sum())


# Decay of the background gradient energy inside D


def gradient_norm_bracket(scenario: Scenario, taus: Sequence[float] = (5, 7, 10, 14, 20, 28),
                          h: Optional[float] = 0.025, tol: float = 0.07, margin: float = 0.6
                          ) -> OracleReport:
    """Exponential rate of ``g(tau) = int_D |grad v|^2`` and its polynomial envelope.

    ``log g`` is fitted by ``a + b tau + p log tau``.  The check passes when
    ``b`` is within ``tol`` of ``-2 l(D, B)`` and
    ``r(tau) = log g + 2 tau l`` stays inside
    ``[-4 log tau - K, 2 log tau + K]`` where ``K`` is the smallest
    constant admitting the first sample.

    Raises
    ------
    ResolutionError
        If fewer than 6 cells span ``D`` in some direction.
    """
    h = scenario.grid.h if h is None else float(h)
    lo, hi = scenario.obstacle.bounding_box()
    cells = float(np.min(hi - lo)) / h
    if cells < 6 - 1e-9:
        raise ResolutionError(f"only {cells:.1f} cells across D at h = {h}; need at least 6 "
                              f"(h <= {float(np.min(hi - lo)) / 6:.4g})")
    taus = np.asarray(sorted(taus), float)
    l_DB = scenario.distances().l_DB
    grid = elliptic_grid(scenario, margin=margin, h=h)
    g = []
    iters = []
    for tau in taus:
        fld = solve_screened(scenario, float(tau), grid=grid)
        g.append(gradient_energy(fld))
        iters.append(fld.iterations)
    g = np.asarray(g)
    lg = np.log(g)
    A = np.stack([np.ones_like(taus), taus, np.log(taus)], axis=1)
    coef = np.linalg.lstsq(A, lg, rcond=None)[0]
    slope = float(coef[1])
    linear = float(np.polyfit(taus, lg, 1)[0])
    target = -2.0 * l_DB
    rel = abs(slope - target) / abs(target)
    r = lg + 2.0 * taus * l_DB
    lt = np.log(taus)
    K = max(r[0] - 2 * lt[0], -r[0] - 4 * lt[0])
    inside = (r >= -4 * lt - K - 1e-12) & (r <= 2 * lt + K + 1e-12)
    passed = bool(rel <= tol and inside.all())
    return OracleReport(
        name="gradient_norm_bracket",
        params={"taus": taus, "h": h, "margin": margin, "scenario": scenario.describe()},
        measured={"slope": slope, "linear_slope": linear, "log_tau_coef": float(coef[2]),
                  "g": g, "envelope_inside": inside},
        reference={"slope": target, "l_DB": l_DB},
        tolerance={"relative_slope": tol, "envelope_K": float(K)},
        passed=passed,
        details={"relative_error": rel, "iterations": iters},
    )


# Energy bracket of the indicator


def _region_bounds(scenario: Scenario, record: ReceiverRecord, q: int):
    reg = record.region
    h = reg.h
    go = reg.global_offset()
    v = reg.values[q]
    shape = v.shape
    centers = [(go[a] + np.arange(shape[a]) + 0.5) * h for a in range(3)]
    X = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)
    med = scenario.medium
    g0 = np.where(X[..., 2] > 0, med.gamma_plus, med.gamma_minus)
    g = g0 + scenario.obstacle.contrast * scenario.obstacle.contains(X.reshape(-1, 3)).reshape(shape)
    f0 = face_coefficients(g0)
    f1 = face_coefficients(g)
    lower = upper = 0.0
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        dv2 = ((v[hi] - v[lo]) / h) ** 2
        a0, a1 = f0[a][lo], f1[a][lo]
        lower += float(np.sum((a0 - a1) * dv2)) * h**3
        upper += float(np.sum(a0 * (a0 - a1) / a1 * dv2)) * h**3
    return lower, upper


def lemma11_bracket(scenario: Scenario, tau: float, record: Optional[ReceiverRecord] = None,
                    rel_slack: float = 5e-2) -> OracleReport:
    """Check ``lower - slack <= I <= upper + slack`` for the energy bounds

    ``lower = int (gamma0 - gamma) |grad v|^2`` and
    ``upper = int gamma0 (gamma0 - gamma) / gamma |grad v|^2``.

    ``grad v`` comes from the transform of the background wave over the
    obstacle box.  The slack is ``rel_slack * max(|lower|, |upper|)`` plus
    ``exp(-tau T) / tau`` times the size of ``F = u_t + tau u`` at ``T``
    on ``B``.
    """
    tau = float(tau)
    if record is None or record.region is None or not np.any(np.isclose(record.region.taus, tau)):
        record = simulate(scenario, tau_max=max(tau, 1.0), laplace_taus=[tau],
                          laplace_region=scenario.obstacle)
    q = int(np.argmin(np.abs(record.region.taus - tau)))
    lower, upper = _region_bounds(scenario, record, q)
    I = residual_indicator(record, tau)
    u = record.samples
    ut = (u[:, -1] - u[:, -2]) / record.dt
    F = np.abs(ut) + tau * np.abs(u[:, -1])
    budget = float(np.exp(-tau * record.T) / tau * record.amplitude * np.sum(np.abs(record.weights)) * F.max())
    slack = rel_slack * max(abs(lower), abs(upper)) + budget
    passed = bool(lower - slack <= I <= upper + slack)
    return OracleReport(
        name="lemma11_bracket",
        params={"tau": tau, "T": record.T, "h": record.h, "contrast": scenario.obstacle.contrast,
                "rel_slack": rel_slack},
        measured={"I": I},
        reference={"lower": lower, "upper": upper},
        tolerance={"slack": slack, "tail_budget": budget},
        passed=passed,
    )


# Structure of the minimising pair


def _segment_min_many(xs, y, gm, gp, iters: int = 100):
    """Travel times from many lower points to one upper point by bisection
    on the derivative along each horizontal segment."""
    xs = np.asarray(xs, float)
    d = np.hypot(y[0] - xs[:, 0], y[1] - xs[:, 1])
    a, b = np.abs(xs[:, 2]), abs(y[2])
    lo = np.zeros(len(xs))
    hi = d.copy()
    for _ in range(iters):
        m = 0.5 * (lo + hi)
        der = m / np.sqrt(m * m + a * a) / np.sqrt(gm) - (d - m) / np.sqrt((d - m) ** 2 + b * b) / np.sqrt(gp)
        pos = der > 0
        hi = np.where(pos, m, hi)
        lo = np.where(pos, lo, m)
    s = 0.5 * (lo + hi)
    return np.sqrt(s * s + a * a) / np.sqrt(gm) + np.sqrt((d - s) ** 2 + b * b) / np.sqrt(gp), s, d


def minimizer_structure_check(scenario: Scenario, n_d: int = 300, n_b: int = 300, seed: int = 0,
                              cos_tol: float = 1e-6) -> OracleReport:
    """Normals at the minimising pair and the doubled minimum.

    Checks that the outward normal of ``D`` at ``x0`` and the outward
    normal of ``B`` at ``y0`` are parallel to the rays towards the
    interface point, and that minimising ``l(x, y) + l(x, xi)`` over
    samples of ``dD x dB x dB`` gives twice the single minimum with
    ``y = xi``.
    """
    med = scenario.medium
    gm, gp = med.gamma_minus, med.gamma_plus
    dist = scenario.distances()
    zt = np.array([dist.z0[0], dist.z0[1], 0.0])
    nu_d = scenario.obstacle.outward_normal(dist.x0)
    ray_d = (zt - dist.x0) / np.linalg.norm(zt - dist.x0)
    cos_d = float(np.dot(nu_d, ray_d))
    src = scenario.source
    nu_b = (dist.y0 - src.center) / src.radius
    ray_b = (zt - dist.y0) / np.linalg.norm(zt - dist.y0)
    cos_b = float(np.dot(nu_b, ray_b))

    rng = np.random.default_rng(seed)
    bd = scenario.obstacle.boundary_samples
    bd = bd[rng.choice(len(bd), size=min(n_d, len(bd)), replace=False)]
    # include the polished minimiser so the discrete and continuous minima coincide
    bd = np.vstack([bd, dist.x0[None, :]])
    dirs = rng.normal(size=(n_b, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    bb = np.vstack([src.center + src.radius * dirs, dist.y0[None, :]])
    L = np.stack([_segment_min_many(bd, yb, gm, gp)[0] for yb in bb], axis=1)
    l0 = float(L.min())
    # exhaustive over (x, y, xi)
    best = np.inf
    arg = None
    for i in range(len(bd)):
        S = L[i][:, None] + L[i][None, :]
        k = int(np.argmin(S))
        if S.flat[k] < best:
            best = float(S.flat[k])
            arg = (i, k // S.shape[1], k % S.shape[1])
    y1, xi1 = bb[arg[1]], bb[arg[2]]
    sep = float(np.linalg.norm(y1 - xi1))
    spacing = src.radius * np.sqrt(4 * np.pi / len(bb))
    ok = (cos_d >= 1 - cos_tol and cos_b >= 1 - cos_tol and abs(best - 2 * l0) <= 1e-12 * max(1.0, l0)
          and sep <= spacing)
    return OracleReport(
        name="minimizer_structure_check",
        params={"n_d": n_d, "n_b": n_b, "scenario": scenario.describe()},
        measured={"cos_D": cos_d, "cos_B": cos_b, "l1": best, "y_xi_separation": sep},
        reference={"cos": 1.0, "2_l0": 2 * l0, "l_DB_polished": dist.l_DB},
        tolerance={"cos": cos_tol, "separation": spacing},
        passed=bool(ok),
        seed=seed,
    )
