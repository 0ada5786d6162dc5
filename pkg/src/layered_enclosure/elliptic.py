"""Finite difference solve of ``(div gamma0 grad - tau^2) v + f = 0``.

Same lattice and flux stencil as the time domain solver, zero values on a
ring of boundary cells.  The matrix is symmetric positive definite, so a
Jacobi preconditioned conjugate gradient loop is used.  Every vector
operation in that loop is local, which lets entries far from the source
converge to values many orders of magnitude below the maximum; a monitor
quantity on a chosen region is required to settle besides the residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numba as nb
import numpy as np

from .errors import NumericalFailure, PreconditionError
from .forward import SimGrid, face_coefficients
from .geometry import ObstacleSpec
from .scenario import Scenario

__all__ = ["EllipticField", "elliptic_grid", "solve_screened", "face_region_sums", "gradient_energy"]


@nb.njit(cache=True)
def _apply(u, out, gx, gy, gz, shift):
    nx, ny, nz = u.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                a = u[i, j, k]
                L = (gx[i, j, k] * (u[i + 1, j, k] - a) - gx[i - 1, j, k] * (a - u[i - 1, j, k])
                     + gy[i, j, k] * (u[i, j + 1, k] - a) - gy[i, j - 1, k] * (a - u[i, j - 1, k])
                     + gz[i, j, k] * (u[i, j, k + 1] - a) - gz[i, j, k - 1] * (a - u[i, j, k - 1]))
                out[i, j, k] = shift * a - L


def elliptic_grid(scenario: Scenario, margin: float = 0.6, h: Optional[float] = None) -> SimGrid:
    """Background lattice around ``B`` and ``D`` with no sponge."""
    med = scenario.medium
    h = scenario.grid.h if h is None else float(h)
    dlo, dhi = scenario.obstacle.bounding_box()
    c, r = scenario.source.center, scenario.source.radius
    lo = np.minimum(dlo, c - r) - margin
    hi = np.maximum(dhi, c + r) + margin
    i0 = np.floor(lo / h).astype(int) - 1
    i1 = np.ceil(hi / h).astype(int) + 1
    shape = tuple(int(v) for v in (i1 - i0))
    grid = SimGrid(h, i0, shape, None, None, None, 0, None)
    x3 = grid.axis(2)
    g0 = np.broadcast_to(np.where(x3 > 0, med.gamma_plus, med.gamma_minus)[None, None, :], shape).copy()
    mask = np.zeros(shape, dtype=bool)
    sl = grid.box_slices(dlo, dhi, pad=1)
    mask[sl] = scenario.obstacle.contains(grid.centers(sl))
    g = g0.copy()
    g[mask] += scenario.obstacle.contrast
    grid.gamma0, grid.gamma, grid.obstacle_mask = g0, g, mask
    grid.damping = np.zeros(0)
    return grid


@dataclass
class EllipticField:
    """Solution on an aligned lattice plus solver diagnostics."""

    grid: SimGrid
    tau: float
    values: np.ndarray
    iterations: int
    residual: float

    def at_indices(self, index: np.ndarray) -> np.ndarray:
        """Values at global lattice indices (rows of ``index``)."""
        loc = np.asarray(index) - self.grid.offset[None, :]
        if np.any(loc < 0) or np.any(loc >= np.array(self.grid.shape)):
            raise PreconditionError("requested cells are outside the elliptic box")
        return self.values[loc[:, 0], loc[:, 1], loc[:, 2]]


def face_region_sums(v: np.ndarray, h: float, weight_fn: Callable, region_mask: np.ndarray) -> float:
    """``sum_faces w_f (D_f v / h)^2 h^3`` over faces touching ``region_mask``.

    ``weight_fn(axis, lo_slice, hi_slice)`` returns per-face weights for the
    faces along ``axis``.
    """
    total = 0.0
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        touch = region_mask[lo] | region_mask[hi]
        if not touch.any():
            continue
        dv = (v[hi] - v[lo]) / h
        w = weight_fn(a, lo, hi)
        total += float(np.sum((w * dv * dv)[touch])) * h**3
    return total


def _gradient_energy(v, h, mask):
    """``int_D |grad v|^2`` with each face weighted by the fraction of its
    two cells inside ``D``."""
    m = mask.astype(float)
    return face_region_sums(v, h, lambda a, lo, hi: 0.5 * (m[lo] + m[hi]), mask)


def solve_screened(scenario: Scenario, tau: float, grid: Optional[SimGrid] = None, rtol: float = 1e-10,
                   monitor_rtol: float = 1e-8, max_iter: int = 50_000, check_every: int = 25
                   ) -> EllipticField:
    """Solve the background screened problem with ``f`` from the scenario source.

    Converged when the relative residual is below ``rtol`` and the monitor
    ``int_D |grad v|^2`` changes by less than ``monitor_rtol`` between
    checks.

    Raises
    ------
    NumericalFailure
        If ``max_iter`` iterations do not satisfy both conditions.
    """
    if not tau > 0:
        raise PreconditionError("tau must be positive")
    if grid is None:
        grid = elliptic_grid(scenario)
    h = grid.h
    faces = face_coefficients(grid.gamma0)
    src = scenario.source
    sl = grid.box_slices(src.center - src.radius - 2 * h, src.center + src.radius + 2 * h)
    f = np.zeros(grid.shape)
    f[sl] = src.profile(grid.centers(sl), h)
    inner = (slice(1, -1),) * 3
    b = np.zeros(grid.shape)
    b[inner] = (h * h * f)[inner]
    shift = tau * tau * h * h
    d = np.full(grid.shape, shift)
    for a, g in enumerate(faces):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        d[tuple(lo)] += g[tuple(lo)]
        d[tuple(hi)] += g[tuple(lo)]
    dinv = np.zeros(grid.shape)
    dinv[inner] = 1.0 / d[inner]
    mask = grid.obstacle_mask
    x = np.zeros(grid.shape)
    r = b.copy()
    z = r * dinv
    p = z.copy()
    Ap = np.zeros(grid.shape)
    rz = float(np.vdot(r, z))
    bn = float(np.linalg.norm(b))
    if bn == 0.0:
        return EllipticField(grid, tau, x, 0, 0.0)
    last = None
    res = 1.0
    for it in range(1, max_iter + 1):
        _apply(p, Ap, *faces, shift)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        if it % check_every == 0:
            res = float(np.linalg.norm(r)) / bn
            mon = _gradient_energy(x, h, mask) if mask.any() else 0.0
            settled = last is not None and (mon > 0.0 or not mask.any()) and abs(mon - last) <= monitor_rtol * abs(mon)
            if res <= rtol and settled:
                return EllipticField(grid, tau, x, it, res)
            last = mon
        z = r * dinv
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericalFailure(f"screened solve did not converge in {max_iter} iterations (residual {res:.2e})",
                           estimates=(res,))


def gradient_energy(field: EllipticField) -> float:
    """``int_D |grad v|^2`` on the face lattice."""
    return _gradient_energy(field.values, field.grid.h, field.grid.obstacle_mask)
