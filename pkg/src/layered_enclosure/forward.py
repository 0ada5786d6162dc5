"""Second order time domain solver for ``u_tt = div(gamma grad u)``.

Cell centred unknowns on a uniform lattice whose faces include the plane
``x3 = 0``.  Fluxes use the harmonic mean of the two adjacent cell values,
which is the conservative stencil for a discontinuous coefficient.  A
damping sponge with cubic ramp surrounds the physical box.

By default the field is split as ``u = u0 + us`` where ``u0`` solves the
background problem and ``us`` is driven by ``(L_gamma - L_gamma0) u0``.
Both pieces are advanced with the same leapfrog scheme, so their sum is the
leapfrog solution of the full problem, while ``us`` is exactly zero until
the discrete wave has reached the obstacle and come back.  This keeps the
obstacle response free of cancellation error even when it is many orders
of magnitude below ``u0``.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .errors import ConfigurationError, InstabilityError, PreconditionError
from .geometry import ObstacleSpec, SourceBall
from .scenario import Scenario

__all__ = [
    "SimGrid",
    "ReceiverRecord",
    "RegionTransform",
    "build_grid",
    "cfl_dt",
    "face_coefficients",
    "exp_trapezoid_coeffs",
    "apply_operator",
    "run",
    "simulate",
    "save_record",
    "load_record",
    "export_csv",
]


def exp_trapezoid_coeffs(alpha):
    """Weights of ``int_0^1 exp(-alpha s) ((1 - s) a + s b) ds = phi0 a + phi1 b``.

    Exact product rule for a linear interpolant against an exponential;
    small ``alpha`` uses the Taylor series to avoid cancellation.
    """
    a = np.asarray(alpha, dtype=float)
    small = np.abs(a) < 0.1
    with np.errstate(divide="ignore", invalid="ignore"):
        em = np.exp(-a)
        p0 = (a - 1.0 + em) / (a * a)
        p1 = (1.0 - (1.0 + a) * em) / (a * a)
    s0 = np.zeros_like(a)
    s1 = np.zeros_like(a)
    term = np.ones_like(a)
    fact = 2.0
    for n in range(12):
        s0 = s0 + term / fact
        s1 = s1 + (n + 1) * term / fact
        term = term * (-a)
        fact *= n + 3
    p0 = np.where(small, s0, p0)
    p1 = np.where(small, s1, p1)
    if p0.ndim == 0:
        return float(p0), float(p1)
    return p0, p1


def face_coefficients(g: np.ndarray):
    """Harmonic face averages; ``gx[i]`` couples cells ``i`` and ``i + 1``."""
    out = []
    for a in range(3):
        f = np.zeros_like(g)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        gl, gh = g[tuple(lo)], g[tuple(hi)]
        f[tuple(lo)] = 2.0 * gl * gh / (gl + gh)
        out.append(f)
    return tuple(out)


@dataclass
class SimGrid:
    """Uniform cell-centred lattice.

    Cell ``i`` along axis ``a`` has centre ``(offset[a] + i + 0.5) * h``, so
    lattices with the same ``h`` are aligned and ``x3 = 0`` is always a
    face.

    Attributes
    ----------
    h : float
    offset : ndarray of int, shape (3,)
    shape : tuple of int
    gamma : ndarray
        Cell coefficient including the obstacle.
    gamma0 : ndarray
        Background two-layer coefficient.
    damping : ndarray
        Sponge damping rate ``sigma``; zero in the physical box.
    sponge_cells : int
    """

    h: float
    offset: np.ndarray
    shape: tuple
    gamma: np.ndarray
    gamma0: np.ndarray
    damping: np.ndarray
    sponge_cells: int
    obstacle_mask: np.ndarray = field(repr=False)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, a: int) -> np.ndarray:
        return (self.offset[a] + np.arange(self.shape[a]) + 0.5) * self.h

    def centers(self, sl: Optional[tuple] = None) -> np.ndarray:
        axes = [self.axis(a) for a in range(3)]
        if sl is not None:
            axes = [axes[a][sl[a]] for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def box_slices(self, lo, hi, pad: int = 0) -> tuple:
        """Index slices of the cells whose centres lie in ``[lo, hi]``."""
        sl = []
        for a in range(3):
            i0 = int(np.floor(lo[a] / self.h - 0.5)) - self.offset[a] - pad
            i1 = int(np.ceil(hi[a] / self.h - 0.5)) - self.offset[a] + pad + 1
            sl.append(slice(max(i0, 0), min(i1, self.shape[a])))
        return tuple(sl)

    def physical_extent(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.sponge_cells
        lo = (self.offset + s) * self.h
        hi = (self.offset + np.array(self.shape) - s) * self.h
        return lo, hi


def _sponge(shape, sponge_cells, h, dt_free_speed):
    """Cubic damping ramp rising to ``sigma_max`` at the outer boundary."""
    damp = np.zeros(shape)
    if sponge_cells == 0:
        return damp
    W = sponge_cells * h
    sigma_max = 3.0 * dt_free_speed / W * np.log(1e4)
    d = np.zeros(shape)
    for a in range(3):
        n = shape[a]
        i = np.arange(n) + 0.5
        depth = np.maximum(np.maximum(sponge_cells - i, i - (n - sponge_cells)), 0.0) / sponge_cells
        sh = [1, 1, 1]
        sh[a] = n
        d = np.maximum(d, depth.reshape(sh))
    return sigma_max * np.clip(d, 0.0, 1.0) ** 3


def build_grid(scenario: Scenario, T: Optional[float] = None, allocate: bool = True) -> SimGrid:
    """Lattice containing ``B`` and ``D`` plus a travel margin and the sponge.

    Raises
    ------
    ConfigurationError
        If the cell count exceeds ``scenario.grid.max_cells``.
    """
    gp = scenario.grid
    med = scenario.medium
    h = gp.h
    T = scenario.T if T is None else float(T)
    gmax = max(med.max_gamma, med.gamma_minus + scenario.obstacle.contrast)
    margin = np.sqrt(gmax) * T if gp.margin is None else gp.margin
    dlo, dhi = scenario.obstacle.bounding_box()
    c, r = scenario.source.center, scenario.source.radius
    lo = np.minimum(dlo, c - r) - margin
    hi = np.maximum(dhi, c + r) + margin
    i0 = np.floor(lo / h).astype(int) - gp.sponge_cells
    i1 = np.ceil(hi / h).astype(int) + gp.sponge_cells
    shape = tuple(int(v) for v in (i1 - i0))
    n = int(np.prod(shape))
    if n > gp.max_cells:
        raise ConfigurationError(
            f"grid needs {n} cells {shape} but the budget is {gp.max_cells} "
            f"(h={h}, margin={margin:.3f})"
        )
    if not allocate:
        return SimGrid(h, i0, shape, None, None, None, gp.sponge_cells, None)
    grid = SimGrid(h, i0, shape, None, None, None, gp.sponge_cells, None)
    x3 = grid.axis(2)
    g0 = np.broadcast_to(np.where(x3 > 0, med.gamma_plus, med.gamma_minus)[None, None, :], shape).copy()
    sl = grid.box_slices(dlo, dhi, pad=1)
    mask = np.zeros(shape, dtype=bool)
    mask[sl] = scenario.obstacle.contains(grid.centers(sl))
    g = g0.copy()
    g[mask] += scenario.obstacle.contrast
    grid.gamma0 = g0
    grid.gamma = g
    grid.obstacle_mask = mask
    grid.damping = _sponge(shape, gp.sponge_cells, h, np.sqrt(g.max()))
    return grid


def cfl_dt(grid: SimGrid, safety: float = 0.9) -> float:
    """Time step ``safety * h / sqrt(3 max gamma)``; ``safety <= 1`` is stable."""
    return float(safety * grid.h / np.sqrt(3.0 * grid.gamma.max()))


@nb.njit(cache=True)
def _step_single(up, u, un, gx, gy, gz, damp, c2):
    nx, ny, nz = u.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                a = u[i, j, k]
                L = (gx[i, j, k] * (u[i + 1, j, k] - a) - gx[i - 1, j, k] * (a - u[i - 1, j, k])
                     + gy[i, j, k] * (u[i, j + 1, k] - a) - gy[i, j - 1, k] * (a - u[i, j - 1, k])
                     + gz[i, j, k] * (u[i, j, k + 1] - a) - gz[i, j, k - 1] * (a - u[i, j, k - 1]))
                s = damp[i, j, k]
                un[i, j, k] = (2.0 * a - (1.0 - s) * up[i, j, k] + c2 * L) / (1.0 + s)


@nb.njit(cache=True)
def _step_split(u0p, u0, u0n, usp, us, usn, gx, gy, gz, g0x, g0y, g0z, damp, c2):
    nx, ny, nz = u0.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                a = u0[i, j, k]
                d1 = u0[i + 1, j, k] - a
                d2 = a - u0[i - 1, j, k]
                d3 = u0[i, j + 1, k] - a
                d4 = a - u0[i, j - 1, k]
                d5 = u0[i, j, k + 1] - a
                d6 = a - u0[i, j, k - 1]
                L0 = (g0x[i, j, k] * d1 - g0x[i - 1, j, k] * d2 + g0y[i, j, k] * d3
                      - g0y[i, j - 1, k] * d4 + g0z[i, j, k] * d5 - g0z[i, j, k - 1] * d6)
                # (L_gamma - L_gamma0) u0, nonzero only next to the obstacle
                dx = ((gx[i, j, k] - g0x[i, j, k]) * d1 - (gx[i - 1, j, k] - g0x[i - 1, j, k]) * d2
                      + (gy[i, j, k] - g0y[i, j, k]) * d3 - (gy[i, j - 1, k] - g0y[i, j - 1, k]) * d4
                      + (gz[i, j, k] - g0z[i, j, k]) * d5 - (gz[i, j, k - 1] - g0z[i, j, k - 1]) * d6)
                b = us[i, j, k]
                Lg = (gx[i, j, k] * (us[i + 1, j, k] - b) - gx[i - 1, j, k] * (b - us[i - 1, j, k])
                      + gy[i, j, k] * (us[i, j + 1, k] - b) - gy[i, j - 1, k] * (b - us[i, j - 1, k])
                      + gz[i, j, k] * (us[i, j, k + 1] - b) - gz[i, j, k - 1] * (b - us[i, j, k - 1]))
                s = damp[i, j, k]
                u0n[i, j, k] = (2.0 * a - (1.0 - s) * u0p[i, j, k] + c2 * L0) / (1.0 + s)
                usn[i, j, k] = (2.0 * b - (1.0 - s) * usp[i, j, k] + c2 * (Lg + dx)) / (1.0 + s)


def apply_operator(u: np.ndarray, faces) -> np.ndarray:
    """``h^2 div(gamma grad u)`` with zero values outside the array."""
    gx, gy, gz = faces
    out = np.zeros_like(u)
    for a, g in enumerate((gx, gy, gz)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        flux = g[tuple(lo)] * (u[tuple(hi)] - u[tuple(lo)])
        out[tuple(lo)] += flux
        out[tuple(hi)] -= flux
    return out


def discrete_energy(u_prev: np.ndarray, u_next: np.ndarray, faces, h: float, dt: float) -> float:
    """Leapfrog energy at the half step between two levels.

    ``1/2 sum((u+ - u-)/dt)^2 h^3 + 1/2 sum_faces gamma_f D u+ D u- h``.
    It is exactly conserved by the undamped scheme.
    """
    kin = 0.5 * np.sum(((u_next - u_prev) / dt) ** 2) * h**3
    pot = 0.0
    for a, g in enumerate(faces):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        dn = u_next[tuple(hi)] - u_next[tuple(lo)]
        dp = u_prev[tuple(hi)] - u_prev[tuple(lo)]
        pot += np.sum(g[tuple(lo)] * dn * dp)
    return float(kin + 0.5 * pot * h)


@dataclass
class RegionTransform:
    """Laplace transforms of the background field accumulated on a sub-box.

    ``values[q]`` holds ``int_0^T exp(-tau_q t) u0(x, t) dt`` on the cells
    ``slices`` of the lattice ``offset``/``h``.
    """

    taus: np.ndarray
    slices: tuple
    offset: np.ndarray
    h: float
    values: np.ndarray

    def global_offset(self) -> np.ndarray:
        return np.array([self.offset[a] + self.slices[a].start for a in range(3)])


@dataclass
class ReceiverRecord:
    """Time samples of the wave on the cells that carry the source.

    Attributes
    ----------
    index : ndarray of int, shape (n, 3)
        Global lattice indices of the receiver cells.
    coords : ndarray, shape (n, 3)
    weights : ndarray, shape (n,)
        ``h^3 f / c0`` so that ``c0 * sum(weights * g)`` approximates
        ``int f g dx``.
    dt, T, h : float
    components : dict
        ``"background"`` and ``"scattered"`` (split runs) or ``"total"``;
        arrays of shape ``(n, nsteps + 1)`` with column ``k`` at ``t = k dt``.
    amplitude : float
        ``c0``.
    """

    index: np.ndarray
    coords: np.ndarray
    weights: np.ndarray
    dt: float
    T: float
    h: float
    components: dict
    amplitude: float = 1.0
    probes: Optional[dict] = None
    energy: Optional[np.ndarray] = None
    region: Optional[RegionTransform] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return next(iter(self.components.values())).shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def samples(self) -> np.ndarray:
        """Total field ``u`` on the receiver cells."""
        if "total" in self.components:
            return self.components["total"]
        return self.components["background"] + self.components["scattered"]

    def component(self, name: str) -> np.ndarray:
        if name == "total":
            return self.samples
        return self.components[name]


def _box_of_support(source: SourceBall, grid: SimGrid):
    r = source.radius + 2 * grid.h
    return grid.box_slices(source.center - r, source.center + r)


def run(grid: SimGrid, source: SourceBall, T: float, *, dt: Optional[float] = None,
        dt_max: Optional[float] = None, safety: float = 0.9, split: bool = True,
        laplace_taus: Sequence[float] = (), laplace_region: Optional[ObstacleSpec] = None,
        probes: Optional[np.ndarray] = None, energy_every: int = 0, taylor_start: bool = True,
        check_every: int = 100) -> ReceiverRecord:
    """Advance ``u_tt = div(gamma grad u)``, ``u(0) = 0``, ``u_t(0) = f`` to time ``T``.

    Parameters
    ----------
    grid : SimGrid
    source : SourceBall
        Supplies ``f``; the receiver cells are its support.
    T : float
        Horizon; the step is shrunk so that ``T`` is a whole number of steps.
    dt, dt_max : float, optional
        Explicit step, or an upper bound combined with the CFL step.
    split : bool
        Advance background and obstacle response separately.
    laplace_taus, laplace_region :
        Accumulate ``int exp(-tau t) u0 dt`` on the cells around
        ``laplace_region`` (one cell of padding) for each ``tau``.
    probes : ndarray, shape (m, 3), optional
        Extra points whose nearest cell is recorded.
    energy_every : int
        Record the discrete energy of the total field every so many steps.
    taylor_start : bool
        Start with ``u(dt) = dt f + dt^3/6 L f`` instead of ``dt f``.

    Raises
    ------
    InstabilityError
        If a non-finite value appears; checked every ``check_every`` steps.
    """
    if not T > 0:
        raise PreconditionError("horizon must be positive")
    h = grid.h
    step = cfl_dt(grid, safety) if dt is None else float(dt)
    if dt_max is not None:
        step = min(step, float(dt_max))
    nsteps = int(np.ceil(T / step - 1e-9))
    step = T / nsteps
    faces = face_coefficients(grid.gamma)
    faces0 = face_coefficients(grid.gamma0) if split else None
    damp = 0.5 * grid.damping * step
    c2 = step * step / (h * h)

    # source and receivers
    sl = _box_of_support(source, grid)
    fsub = source.profile(grid.centers(sl), h)
    f = np.zeros(grid.shape)
    f[sl] = fsub
    sel = np.argwhere(f != 0.0)
    flat = np.ravel_multi_index(sel.T, grid.shape)
    index = sel + grid.offset[None, :]
    coords = (index + 0.5) * h
    weights = f.ravel()[flat] * h**3 / source.amplitude
    nrec = len(flat)

    u1 = step * f
    if taylor_start:
        u1 = u1 + step**3 / 6.0 * apply_operator(f, faces) / (h * h)
    ua = [-u1, np.zeros(grid.shape), np.zeros(grid.shape)]
    sa = [np.zeros(grid.shape), np.zeros(grid.shape), np.zeros(grid.shape)] if split else None

    names = ("background", "scattered") if split else ("total",)
    comps = {k: np.zeros((nrec, nsteps + 1)) for k in names}

    probe_idx = None
    probe_vals = None
    if probes is not None:
        pr = np.atleast_2d(np.asarray(probes, float))
        probe_idx = np.floor(pr / h).astype(int) - grid.offset[None, :]
        if np.any(probe_idx < 0) or np.any(probe_idx >= np.array(grid.shape)):
            raise PreconditionError("probe outside the grid")
        probe_vals = np.zeros((len(pr), nsteps + 1))

    region = None
    if len(laplace_taus):
        if laplace_region is None:
            raise PreconditionError("laplace_region is required with laplace_taus")
        rlo, rhi = laplace_region.bounding_box()
        rsl = grid.box_slices(rlo, rhi, pad=2)
        taus = np.asarray(laplace_taus, float)
        rshape = tuple(s.stop - s.start for s in rsl)
        region = RegionTransform(taus=taus, slices=rsl, offset=grid.offset.copy(), h=h,
                                 values=np.zeros((len(taus),) + rshape))
        # product trapezoid: interior node weight dt (e^a phi1 + phi0), last node dt e^a phi1
        p0, p1 = exp_trapezoid_coeffs(taus * step)
        ea = np.exp(taus * step)
        rw = step * (ea * p1 + p0)
        rw_last = ea * p1 / (ea * p1 + p0)

    energy = [] if energy_every else None
    t_start = time.perf_counter()
    for n in range(nsteps):
        if split:
            _step_split(ua[0], ua[1], ua[2], sa[0], sa[1], sa[2], *faces, *faces0, damp, c2)
            sa = [sa[1], sa[2], sa[0]]
        else:
            _step_single(ua[0], ua[1], ua[2], *faces, damp, c2)
        ua = [ua[1], ua[2], ua[0]]
        k = n + 1
        if split:
            comps["background"][:, k] = ua[1].ravel()[flat]
            comps["scattered"][:, k] = sa[1].ravel()[flat]
        else:
            comps["total"][:, k] = ua[1].ravel()[flat]
        if probe_vals is not None:
            tot = ua[1] + sa[1] if split else ua[1]
            probe_vals[:, k] = tot[probe_idx[:, 0], probe_idx[:, 1], probe_idx[:, 2]]
        if region is not None:
            blk = ua[1][region.slices]
            for q, tau in enumerate(region.taus):
                region.values[q] += (rw[q] * (rw_last[q] if k == nsteps else 1.0)
                                     * np.exp(-tau * k * step)) * blk
        if energy is not None and k % energy_every == 0:
            prev = ua[0] + sa[0] if split else ua[0]
            cur = ua[1] + sa[1] if split else ua[1]
            energy.append((k * step - 0.5 * step, discrete_energy(prev, cur, faces, h, step)))
        if k % check_every == 0 or k == nsteps:
            ok = np.isfinite(comps[names[0]][:, k]).all() and np.isfinite(ua[1]).all()
            if split:
                ok = ok and np.isfinite(sa[1]).all()
            if not ok:
                raise InstabilityError(f"non-finite field at step {k}", step=k)

    meta = {"n_cells": grid.n_cells, "shape": list(grid.shape), "wall_time": time.perf_counter() - t_start}
    return ReceiverRecord(
        index=index, coords=coords, weights=weights, dt=step, T=float(T), h=h, components=comps,
        amplitude=source.amplitude,
        probes=None if probe_vals is None else {"points": np.asarray(probes, float), "values": probe_vals},
        energy=None if energy is None else np.asarray(energy), region=region, meta=meta,
    )


def simulate(scenario: Scenario, T: Optional[float] = None, tau_max: Optional[float] = None,
             **kw) -> ReceiverRecord:
    """Build the grid for ``scenario`` and run it to ``T`` (default ``scenario.T``).

    ``tau_max`` caps the step at ``0.1 / tau_max`` so the record can be
    Laplace transformed up to that ``tau``.
    """
    T = scenario.T if T is None else float(T)
    grid = build_grid(scenario, T)
    dt_max = None if tau_max is None else 0.1 / float(tau_max)
    kw.setdefault("safety", scenario.grid.safety)
    rec = run(grid, scenario.source, T, dt_max=dt_max, **kw)
    rec.meta["scenario_digest"] = scenario.digest()
    return rec


_MAGIC = b"LAYREC01"


def save_record(record: ReceiverRecord, path, config_hash: str = "") -> None:
    """Binary container: magic, header length, JSON header, float64 payload.

    The payload is each component in header order, row-major
    ``(n_points, n_steps + 1)``.
    """
    names = sorted(record.components)
    header = {
        "dt": record.dt,
        "T": record.T,
        "h": record.h,
        "amplitude": record.amplitude,
        "n_points": int(len(record.weights)),
        "n_times": int(record.n_steps + 1),
        "components": names,
        "index": record.index.tolist(),
        "coords": record.coords.tolist(),
        "weights": record.weights.tolist(),
        "config_hash": config_hash,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(record.components[k], dtype="<f8").tobytes())


def load_record(path) -> ReceiverRecord:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ConfigurationError(f"{path} is not a receiver record")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode())
        shape = (header["n_points"], header["n_times"])
        comps = {}
        for k in header["components"]:
            buf = fh.read(8 * shape[0] * shape[1])
            comps[k] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return ReceiverRecord(
        index=np.asarray(header["index"], int), coords=np.asarray(header["coords"], float),
        weights=np.asarray(header["weights"], float), dt=header["dt"], T=header["T"], h=header["h"],
        components=comps, amplitude=header["amplitude"], meta={"config_hash": header["config_hash"]},
    )


def export_csv(record: ReceiverRecord, path, component: str = "total", config_hash: str = "") -> None:
    """Time series table, one column per receiver cell."""
    data = record.component(component)
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n# component={component}\n")
        fh.write("# t," + ",".join(f"p{i}" for i in range(data.shape[0])) + "\n")
        for k, t in enumerate(record.times):
            fh.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in data[:, k]) + "\n")
