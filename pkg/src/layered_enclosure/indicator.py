"""Indicator function of the time domain enclosure method.

For a measured wave ``u`` on the source ball ``B`` the Laplace transform
``w = int_0^T exp(-tau t) u dt`` is compared with the background solution
``v`` of ``(div gamma0 grad - tau^2) v + f = 0``.  The indicator
``I(tau, T) = int f (w - v)`` decays like ``exp(-2 tau l(D, B))`` when
``T`` exceeds the round trip time, with a sign fixed by the sign of the
contrast.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .elliptic import elliptic_grid, solve_screened
from .errors import ContractError, PreconditionError, ResolutionError
from .forward import ReceiverRecord, exp_trapezoid_coeffs, simulate
from .geometry import SourceBall
from .scenario import Scenario

__all__ = [
    "FieldOnB",
    "IndicatorCurve",
    "laplace_weights",
    "laplace_time_transform",
    "background_field_v",
    "indicator_value",
    "residual_indicator",
    "fit_log_slope",
    "classify_sign",
    "tau_sweep",
    "threshold_scan",
    "default_taus",
    "write_curve_csv",
    "write_summary_jsonl",
]

DT_CONTRACT = 0.1


@dataclass(frozen=True)
class FieldOnB:
    """A field sampled on the receiver cells.

    ``values`` carry a factor ``exp(tau * shift)``; fields are only
    comparable when ``tau`` and ``shift`` agree.
    """

    index: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    tau: float
    shift: float = 0.0
    label: str = ""


def default_taus(n: int = 12, lo: float = 10.0, hi: float = 80.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def laplace_weights(dt: float, n_samples: int, tau: float, T: float, shift: float = 0.0) -> np.ndarray:
    """Weights of ``int_0^T exp(-tau (t - shift)) g(t) dt`` for samples ``g(k dt)``.

    ``g`` is interpolated linearly between samples and the exponential is
    integrated exactly against the interpolant, so the error depends on
    the smoothness of ``g`` only.  When ``T`` is not a sample time the last
    partial interval uses the interpolated value at ``T``.

    Raises
    ------
    ResolutionError
        If ``tau * dt > 0.1``.
    """
    if tau * dt > DT_CONTRACT * (1 + 1e-12):
        raise ResolutionError(
            f"tau*dt = {tau * dt:.4f} exceeds {DT_CONTRACT}; rerun with dt <= {DT_CONTRACT / tau:.3e}"
        )
    m = int(np.floor(T / dt + 1e-9))
    if m > n_samples - 1:
        raise PreconditionError(f"T = {T} is beyond the record horizon {(n_samples - 1) * dt}")
    t = np.arange(n_samples) * dt
    e = np.exp(-tau * (t - shift))
    w = np.zeros(n_samples)
    if m > 0:
        p0, p1 = exp_trapezoid_coeffs(tau * dt)
        left = dt * e[:m]
        w[:m] += p0 * left
        w[1 : m + 1] += p1 * left
    rem = T - m * dt
    if rem > 1e-9 * dt and m + 1 < n_samples:
        q0, q1 = exp_trapezoid_coeffs(tau * rem)
        a = rem / dt
        # g(T) = (1 - a) g_m + a g_{m+1}
        w[m] += rem * e[m] * (q0 + q1 * (1 - a))
        w[m + 1] += rem * e[m] * q1 * a
    return w


def laplace_time_transform(record: ReceiverRecord, tau: float, T: Optional[float] = None,
                           component: str = "total", shift: float = 0.0) -> FieldOnB:
    """``w = int_0^T exp(-tau t) u(x, t) dt`` per receiver cell, by the product trapezoid rule
    of :func:`laplace_weights`.

    Raises
    ------
    ResolutionError
        If ``tau * dt > 0.1``.
    """
    if not tau >= 1.0:
        raise PreconditionError(f"tau must be >= 1, got {tau}")
    T = record.T if T is None else float(T)
    data = record.component(component)
    w = laplace_weights(record.dt, data.shape[1], tau, T, shift)
    return FieldOnB(record.index, record.weights, data @ w, float(tau), float(shift), label=component)


def background_field_v(scenario: Scenario, tau: float, method: str = "two_run",
                       record: Optional[ReceiverRecord] = None, shift: float = 0.0,
                       elliptic_margin: float = 0.6) -> FieldOnB:
    """Background solution ``v`` on the receiver cells.

    ``two_run`` transforms the obstacle-free wave over the whole record
    horizon; it differs from ``v`` by ``O(exp(-tau T))``.  ``elliptic``
    solves the screened problem directly.
    """
    if method == "two_run":
        if record is None or "background" not in record.components:
            bg = scenario.with_contrast(0.0)
            rec0 = simulate(bg, T=scenario.T, tau_max=tau, split=False)
            if record is not None and not np.array_equal(rec0.index, record.index):
                raise ContractError("background run produced a different receiver set")
            return laplace_time_transform(rec0, tau, component="total", shift=shift)
        return laplace_time_transform(record, tau, component="background", shift=shift)
    if method == "elliptic":
        fld = solve_screened(scenario, tau, grid=elliptic_grid(scenario, margin=elliptic_margin))
        if record is not None:
            index, weights = record.index, record.weights
        else:
            g = fld.grid
            src = scenario.source
            sl = g.box_slices(src.center - src.radius - 2 * g.h, src.center + src.radius + 2 * g.h)
            prof = np.zeros(g.shape)
            prof[sl] = src.profile(g.centers(sl), g.h)
            loc = np.argwhere(prof != 0.0)
            index = loc + g.offset[None, :]
            weights = prof[tuple(loc.T)] * g.h**3 / src.amplitude
        vals = fld.at_indices(index) * np.exp(tau * shift)
        return FieldOnB(index, weights, vals, float(tau), float(shift), label="elliptic")
    raise PreconditionError(f"unknown method {method!r}")


def indicator_value(w: FieldOnB, v: FieldOnB, source: SourceBall) -> float:
    """``c0 * sum(weights * (w - v))``.

    Raises
    ------
    ContractError
        If the two fields live on different cells or use different scalings.
    """
    if w.index.shape != v.index.shape or not np.array_equal(w.index, v.index):
        raise ContractError("w and v are sampled on different receiver cells")
    if w.tau != v.tau or w.shift != v.shift:
        raise ContractError("w and v use different tau or scaling")
    return float(source.amplitude * np.sum(w.weights * (w.values - v.values)))


def residual_indicator(record: ReceiverRecord, tau: float, T: Optional[float] = None,
                       shift: float = 0.0) -> float:
    """Indicator from a split record with ``v`` taken as the background
    transform over the full record horizon.

    ``w - v`` is the transform of the obstacle response on ``[0, T]`` minus
    the background tail on ``[T, T_record]``; both are formed directly, so
    no cancellation occurs.
    """
    if "scattered" not in record.components:
        raise PreconditionError("residual indicator needs a split record")
    T = record.T if T is None else float(T)
    n = record.n_steps + 1
    ws = laplace_weights(record.dt, n, tau, T, shift)
    full = laplace_weights(record.dt, n, tau, record.T, shift)
    tail = full - ws
    r = record.components["scattered"] @ ws - record.components["background"] @ tail
    return float(record.amplitude * np.sum(record.weights * r))


def fit_log_slope(taus, values, weights: str = "tau"):
    """Weighted least squares line through ``(tau, log|I|)``.

    Points whose sign differs from the last value, and every point before
    the last sign change, are excluded.  Weights are proportional to
    ``tau`` (squared residual sense).

    Returns
    -------
    slope, intercept : float
    used : ndarray of bool
    """
    taus = np.asarray(taus, float)
    vals = np.asarray(values, float)
    sg = np.sign(vals)
    used = np.ones(len(taus), dtype=bool)
    change = np.nonzero(sg[1:] != sg[:-1])[0]
    if len(change):
        used[: change[-1] + 1] = False
    used &= vals != 0
    if used.sum() < 2:
        return float("nan"), float("nan"), used
    w = np.sqrt(taus[used]) if weights == "tau" else None
    slope, icpt = np.polyfit(taus[used], np.log(np.abs(vals[used])), 1, w=w)
    return float(slope), float(icpt), used


def classify_sign(values) -> str:
    v = np.asarray(values)
    if len(v) and np.all(v > 0):
        return "A1"
    if len(v) and np.all(v < 0):
        return "A2"
    return "undetermined"


@dataclass
class IndicatorCurve:
    """Sampled indicator and derived quantities.

    ``slope_estimate`` approximates ``-2 l(D, B)``; ``l_estimate`` is
    ``-slope_estimate / 2``.
    """

    taus: np.ndarray
    values: np.ndarray
    T: float
    slope_estimate: float
    sign_class: str
    fit_mask: np.ndarray
    l_estimate: float = float("nan")
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(np.diff(self.taus) <= 0):
            raise PreconditionError("taus must be strictly increasing")
        self.l_estimate = -0.5 * self.slope_estimate

    @property
    def top_half(self) -> np.ndarray:
        n = len(self.taus)
        m = np.zeros(n, dtype=bool)
        m[n // 2:] = True
        return m


_UNDERFLOW = 1e2 * np.finfo(float).tiny


def tau_sweep(scenario: Scenario, taus: Optional[Sequence[float]] = None, T: Optional[float] = None,
              record: Optional[ReceiverRecord] = None, v_method: str = "two_run") -> IndicatorCurve:
    """Indicator over a range of ``tau`` with slope fit and sign class.

    The slope is fitted on the upper half of the ``tau`` range.  Values of
    ``tau`` violating ``tau * dt <= 0.1`` for a supplied record are dropped
    with a warning, as are values whose indicator underflows.
    """
    taus = default_taus() if taus is None else np.asarray(taus, float)
    taus = np.sort(taus)
    T = scenario.T if T is None else float(T)
    if record is None:
        record = simulate(scenario, T=max(T, scenario.T), tau_max=float(taus.max()))
    notes = []
    ok = taus * record.dt <= DT_CONTRACT * (1 + 1e-12)
    if not ok.all():
        notes.append(f"dropped tau > {DT_CONTRACT / record.dt:.2f} (time step contract)")
        warnings.warn(notes[-1])
        taus = taus[ok]
    vals = []
    for tau in taus:
        if v_method == "two_run" and "scattered" in record.components:
            vals.append(residual_indicator(record, tau, T))
        else:
            w = laplace_time_transform(record, tau, T)
            v = background_field_v(scenario, tau, v_method, record=record)
            vals.append(indicator_value(w, v, scenario.source))
    vals = np.array(vals)
    keep = np.abs(vals) >= _UNDERFLOW
    if np.all(vals == 0.0):
        notes.append("indicator vanishes identically")
    elif not keep.all():
        first = int(np.argmin(keep))
        notes.append(f"indicator underflows from tau = {taus[first]:.3f}; range truncated")
        warnings.warn(notes[-1])
        taus, vals = taus[:first], vals[:first]
    n = len(taus)
    top = np.arange(n) >= n // 2
    slope, _, used = fit_log_slope(taus[top], vals[top])
    mask = np.zeros(n, dtype=bool)
    mask[np.nonzero(top)[0][used]] = True
    return IndicatorCurve(taus=taus, values=vals, T=T, slope_estimate=slope,
                          sign_class=classify_sign(vals[top]), fit_mask=mask, notes=notes)


def threshold_scan(scenario: Scenario, tau_fixed: float, Ts: Sequence[float],
                   record: Optional[ReceiverRecord] = None) -> list:
    """Rescaled indicator ``exp(tau T) I(tau, T)`` for several horizons ``T``.

    ``v`` is the background over the full record horizon, so for ``T``
    below the round trip time the result is dominated by the background
    tail, which decays like ``1/tau``.
    """
    Ts = [float(t) for t in Ts]
    if record is None:
        record = simulate(scenario, T=max(max(Ts), scenario.T), tau_max=tau_fixed)
    out = []
    for T in Ts:
        if T > record.T + 1e-12:
            raise PreconditionError(f"T = {T} is beyond the record horizon {record.T}")
        out.append((T, residual_indicator(record, tau_fixed, T, shift=T)))
    return out


def write_curve_csv(curve: IndicatorCurve, path, config_hash: str = "") -> None:
    """CSV with columns ``tau, I, log_abs_I, T`` and commented header."""
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("# tau,I,log_abs_I,T\n")
        for t, v in zip(curve.taus, curve.values):
            la = float(np.log(abs(v))) if v != 0 else float("-inf")
            fh.write(f"{float(t)!r},{float(v)!r},{la!r},{float(curve.T)!r}\n")


def write_summary_jsonl(records: Sequence[dict], path) -> None:
    """One JSON object per line, keys sorted."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
