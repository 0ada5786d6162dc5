"""Fundamental solution of the two-layer screened operator, receiver below.

For ``x3 < 0 < y3`` the fundamental solution of ``(div gamma0 grad - tau^2)``
is a superposition over interface points ``z'`` of a refracted kernel
``E(x, z')`` times the upper-layer free-space factor.  ``E`` is an integral
over a steepest-descent contour on which the phase is real, so it is
computed by a plain tensor Gauss-Legendre rule.

All expensive evaluations work in scaled form: the dominant exponential
``exp(-tau * l)`` is carried separately and only applied at the end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import NumericalFailure, PreconditionError
from .geometry import LayeredMedium, SnellSolution, as_point3, snell_point

__all__ = [
    "transmission_coeff",
    "steepest_contour",
    "contour_sqrt",
    "contour_amplitude",
    "RefractedKernelValue",
    "PhiValue",
    "Saddle",
    "refracted_kernel_quadrature",
    "refracted_kernel_scaled",
    "refracted_kernel_leading",
    "refracted_gradient_leading",
    "leading_amplitude_E0",
    "laplace_integral_2d",
    "phi_lower",
    "free_space_phi",
    "equal_speed_kernel",
]

# exp(-37) ~ 1e-16 sets the truncation of the contour integral
_TRUNC_LOG = 37.0


def transmission_coeff(rho, medium: LayeredMedium):
    """Transmission coefficient ``R_-(rho)`` for real ``rho >= 0``.

    ``4 g+ g- sqrt(1/g+ + rho^2) sqrt(1/g- + rho^2) /
    (g+ sqrt(1/g+ + rho^2) + g- sqrt(1/g- + rho^2))``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise PreconditionError("transmission coefficient needs finite rho >= 0")
    gp, gm = medium.gamma_plus, medium.gamma_minus
    sp = np.sqrt(1.0 / gp + rho * rho)
    sm = np.sqrt(1.0 / gm + rho * rho)
    out = 4.0 * gp * gm * sp * sm / (gp * sp + gm * sm)
    return float(out) if out.ndim == 0 else out


def steepest_contour(rho, theta):
    """Point ``zeta_1(rho) = i sqrt(1+rho^2) sin(theta) + rho cos(theta)``."""
    rho = np.asarray(rho, dtype=float)
    return 1j * np.sqrt(1.0 + rho * rho) * np.sin(theta) + rho * np.cos(theta)


def contour_sqrt(rho, theta):
    """``sqrt(1 + zeta_1^2)`` on the contour, from its closed form.

    Equals ``sqrt(1+rho^2) cos(theta) + i rho sin(theta)``; evaluating it
    this way never touches a branch cut.
    """
    rho = np.asarray(rho, dtype=float)
    return np.sqrt(1.0 + rho * rho) * np.cos(theta) + 1j * rho * np.sin(theta)


def contour_amplitude(s1, c2, medium: LayeredMedium):
    """Transmission factor ``Q_0`` on the contour.

    Parameters
    ----------
    s1 : complex array
        ``sqrt(1 + zeta_1^2)`` from :func:`contour_sqrt`.
    c2 : real array
        ``sqrt(1 + sigma_2^2)``.

    Notes
    -----
    ``Q_0 = 4 sqrt(g-) c2 s1 P / (P + a0^2 s1)`` with
    ``P = sqrt((a0^2 - 1)/c2^2 + s1^2)``.  For ``a0 >= 1`` and
    ``theta < pi/2`` the radicand of ``P`` stays off the negative real axis
    so the principal root is the analytic continuation.
    """
    a0sq = medium.gamma_minus / medium.gamma_plus
    P = np.sqrt((a0sq - 1.0) / (c2 * c2) + s1 * s1)
    return 4.0 * np.sqrt(medium.gamma_minus) * c2 * s1 * P / (P + a0sq * s1)


@dataclass(frozen=True)
class RefractedKernelValue:
    """Refracted kernel ``E(x, z')`` at one pair and one ``tau``.

    Attributes
    ----------
    value : float
        ``E``.
    leading : float
        Leading asymptotic term.
    rel_remainder : float
        ``value / leading - 1``.
    scaled_value : float
        ``E * exp(tau r / sqrt(g-))`` with ``r = |x - z~'|``.
    gradient : ndarray or None
        ``grad_x E`` when requested.
    nodes : int
        Gauss-Legendre nodes per axis at convergence.
    """

    value: float
    leading: float
    rel_remainder: float
    scaled_value: float
    log_scale: float
    gradient: Optional[np.ndarray] = None
    nodes: int = 0


@dataclass(frozen=True)
class PhiValue:
    """Fundamental solution value and gradient in ``x``.

    ``phi = scaled_phi * exp(-tau * l_value)``; the scaled fields stay
    representable when ``phi`` itself would underflow.
    """

    phi: float
    grad_phi: np.ndarray
    method: str
    scaled_phi: float
    scaled_grad: np.ndarray
    l_value: float
    error_estimate: float = 0.0


@dataclass(frozen=True)
class Saddle:
    """Interior minimum of a phase: location, value and Hessian."""

    point: np.ndarray
    value: float
    hessian: np.ndarray

    @classmethod
    def from_snell(cls, snell: SnellSolution) -> "Saddle":
        return cls(point=np.asarray(snell.z_prime, float), value=snell.l_value, hessian=snell.hessian)


def _pair_geometry(x, zp):
    """Horizontal offset, distance and angle data for ``x`` and many ``z'``."""
    zp = np.atleast_2d(np.asarray(zp, dtype=float))
    d = x[None, :2] - zp
    rh = np.hypot(d[:, 0], d[:, 1])
    r = np.hypot(rh, x[2])
    return d, rh, r


def _gl01(n):
    t, w = leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def refracted_kernel_scaled(x, zp, tau, medium: LayeredMedium, n: int = 64, gradient: bool = False):
    """Vectorised scaled kernel for one ``x`` and many ``z'``.

    Returns
    -------
    e0 : ndarray, shape (m,)
        ``E * exp(k)`` with ``k = tau r / sqrt(g-)``.
    grad : ndarray, shape (m, 3) or None
        ``grad_x E * exp(k)``.
    r : ndarray, shape (m,)
        ``|x - z~'|``.
    """
    x = np.asarray(x, dtype=float)
    d, rh, r = _pair_geometry(x, zp)
    gm = medium.gamma_minus
    sin = rh / r
    cos = np.abs(x[2]) / r
    k = tau / np.sqrt(gm) * r
    # f(sigma) >= 9/8 + |sigma|/6 bounds the tail
    smax = np.maximum(6.0 * (_TRUNC_LOG / k - 1.0 / 8.0), 0.75)
    U = np.arcsinh(smax)
    t, w = _gl01(n)
    u = U[:, None] * t[None, :]
    wu = U[:, None] * w[None, :]
    rho = np.sinh(u)
    ch = np.cosh(u)
    s1 = ch[:, :, None] * cos[:, None, None] + 1j * rho[:, :, None] * sin[:, None, None]
    c2 = ch[:, None, :]
    Q0 = contour_amplitude(s1, c2, medium)
    fch = ch[:, :, None] * ch[:, None, :]
    weight = np.exp(-k[:, None, None] * (fch - 1.0)) * fch * wu[:, :, None] * wu[:, None, :]
    # the integrand is conjugate-symmetric in sigma_1 and even in sigma_2
    F0 = Q0 / ch[:, :, None]
    e0 = 4.0 * np.sum((weight * F0).real, axis=(1, 2)) * tau / (8.0 * np.pi**2 * gm**1.5)
    if not gradient:
        return e0, None, r
    zeta1 = 1j * ch[:, :, None] * sin[:, None, None] + rho[:, :, None] * cos[:, None, None]
    Qt = c2 * Q0 / ch[:, :, None]
    F1 = 1j * zeta1 * Qt
    F2 = -s1 * Qt
    pref = tau**2 / (8.0 * np.pi**2 * gm**2)
    I1 = 4.0 * np.sum((weight * F1).real, axis=(1, 2)) * pref
    I2 = 4.0 * np.sum((weight * F2).real, axis=(1, 2)) * pref
    with np.errstate(invalid="ignore", divide="ignore"):
        eh = np.where(rh[:, None] > 0, d / np.where(rh > 0, rh, 1.0)[:, None], 0.0)
    grad = np.empty((len(r), 3))
    grad[:, :2] = I1[:, None] * eh
    grad[:, 2] = I2 * np.sign(x[2])
    return e0, grad, r


def leading_amplitude_E0(x, zp, medium: LayeredMedium):
    """``E_0(x - z~')`` for many ``z'``; positive whenever ``x3 < 0``."""
    x = np.asarray(x, dtype=float)
    _, rh, r = _pair_geometry(x, zp)
    a0sq = medium.gamma_minus / medium.gamma_plus
    rad = np.sqrt(a0sq * r * r - rh * rh)
    ax3 = np.abs(x[2])
    return 4.0 * np.sqrt(medium.gamma_minus) * ax3 * rad / (r * (rad + a0sq * ax3))


def _check_kernel_args(x, z_prime, tau):
    x = as_point3(x, "x")
    if not x[2] < 0:
        raise PreconditionError(f"x must lie in the lower layer, got x3 = {x[2]}")
    zp = np.asarray(z_prime, dtype=float).reshape(2)
    if not tau >= 1.0:
        raise PreconditionError(f"tau must be >= 1, got {tau}")
    return x, zp


def refracted_kernel_leading(x, z_prime, tau, medium: LayeredMedium):
    """Leading term ``exp(-tau r/sqrt(g-)) / (4 pi g- r) * E_0``.

    Returns
    -------
    value : float
    E0 : float
    """
    x, zp = _check_kernel_args(x, z_prime, tau)
    E0 = float(leading_amplitude_E0(x, zp, medium)[0])
    r = float(np.linalg.norm(x - np.array([zp[0], zp[1], 0.0])))
    return float(np.exp(-tau * r / np.sqrt(medium.gamma_minus)) / (4 * np.pi * medium.gamma_minus * r) * E0), E0


def refracted_gradient_leading(x, z_prime, tau, medium: LayeredMedium) -> np.ndarray:
    """Leading term of ``grad_x E``; parallel to ``x - z~'``."""
    x, zp = _check_kernel_args(x, z_prime, tau)
    gm = medium.gamma_minus
    E0 = float(leading_amplitude_E0(x, zp, medium)[0])
    d = x - np.array([zp[0], zp[1], 0.0])
    r = float(np.linalg.norm(d))
    return -tau * np.exp(-tau * r / np.sqrt(gm)) / (4 * np.pi * gm**1.5 * r) * E0 * d / r


def refracted_kernel_quadrature(x, z_prime, tau, medium: LayeredMedium, rtol: float = 1e-8,
                                n_start: int = 24, n_max: int = 384, gradient: bool = False
                                ) -> RefractedKernelValue:
    """Refracted kernel by tensor quadrature on the steepest-descent contour.

    The node count per axis is multiplied by 1.5 until two successive
    estimates agree to ``rtol``.

    Raises
    ------
    NumericalFailure
        If ``n_max`` is reached without convergence.
    """
    x, zp = _check_kernel_args(x, z_prime, tau)
    r = float(np.linalg.norm(x - np.array([zp[0], zp[1], 0.0])))
    if r == 0.0:
        raise PreconditionError("x coincides with the interface point")
    n = n_start
    prev = None
    while True:
        e0, g, _ = refracted_kernel_scaled(x, zp[None, :], tau, medium, n=n, gradient=gradient)
        cur = np.concatenate([e0, g[0]]) if gradient else e0
        if prev is not None:
            change = np.max(np.abs(cur - prev)) / max(np.max(np.abs(cur)), 1e-300)
            if change <= rtol:
                break
            if n >= n_max:
                raise NumericalFailure(
                    f"refracted kernel quadrature did not reach rtol={rtol} (change {change:.2e})",
                    estimates=(float(prev[0]), float(cur[0])),
                )
        prev = cur
        n = int(np.ceil(1.5 * n))
    ks = tau * r / np.sqrt(medium.gamma_minus)
    scale = np.exp(-ks)
    lead_s = float(leading_amplitude_E0(x, zp, medium)[0]) / (4 * np.pi * medium.gamma_minus * r)
    return RefractedKernelValue(
        value=float(e0[0] * scale),
        leading=float(lead_s * scale),
        rel_remainder=float(e0[0] / lead_s - 1.0),
        scaled_value=float(e0[0]),
        log_scale=float(ks),
        gradient=(g[0] * scale) if gradient else None,
        nodes=n,
    )


def equal_speed_kernel(x, z_prime, tau, gamma: float):
    """Exact refracted kernel when both layers share the coefficient ``gamma``.

    It is twice the normal derivative of the free-space solution on the
    plane, rescaled: ``(2/tau)(tau/sqrt(g) + 1/R)(|x3|/R) e^{-tau R/sqrt(g)}/(4 pi R)``.
    """
    x = np.asarray(x, dtype=float)
    _, _, R = _pair_geometry(x, z_prime)
    k = tau / np.sqrt(gamma)
    return 2.0 / tau * (k + 1.0 / R) * (np.abs(x[2]) / R) * np.exp(-k * R) / (4 * np.pi * R)


def laplace_integral_2d(phase: Callable, amplitude: Callable, saddle, tau: float) -> float:
    """Leading Laplace approximation of ``int exp(-tau phase) amplitude dz'``.

    Parameters
    ----------
    phase, amplitude : callable
        Functions of a 2-vector.
    saddle : Saddle or SnellSolution
        Location and Hessian of the unique interior minimum of ``phase``.

    Returns
    -------
    float
        ``2 pi exp(-tau phase(z*)) / (tau sqrt(det H)) * amplitude(z*)``.
    """
    if isinstance(saddle, SnellSolution):
        saddle = Saddle.from_snell(saddle)
    H = np.asarray(saddle.hessian, dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    if not np.all(ev > 0):
        raise PreconditionError(f"Hessian is not positive definite (eigenvalues {ev})")
    z = np.asarray(saddle.point, dtype=float)
    return float(2 * np.pi * np.exp(-tau * phase(z)) / (tau * np.sqrt(np.prod(ev))) * amplitude(z))


def free_space_phi(x, y, tau, gamma: float) -> float:
    """``exp(-tau |x-y|/sqrt(g)) / (4 pi g |x-y|)``."""
    R = float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))
    return float(np.exp(-tau * R / np.sqrt(gamma)) / (4 * np.pi * gamma * R))


def _lxy(x, y, zp, medium):
    dm = np.hypot(np.hypot(zp[:, 0] - x[0], zp[:, 1] - x[1]), x[2])
    dp = np.hypot(np.hypot(zp[:, 0] - y[0], zp[:, 1] - y[1]), y[2])
    return dm / np.sqrt(medium.gamma_minus) + dp / np.sqrt(medium.gamma_plus), dp


def _phi_window(x, y, snell, tau, medium, excess=40.0):
    """Half width of a square around ``z'(x,y)`` whose inscribed disk has
    phase excess above ``excess / tau`` on its rim."""
    z0 = snell.z_prime
    th = np.linspace(0.0, 2 * np.pi, 128, endpoint=False)
    circ = np.c_[np.cos(th), np.sin(th)]
    W = 0.25 * max(snell.r_minus, 1e-3)
    for _ in range(200):
        lv, _ = _lxy(x, y, z0 + W * circ, medium)
        if tau * (lv.min() - snell.l_value) > excess:
            return W
        W *= 1.25
    raise NumericalFailure("could not size the interface window")


def _phi_quadrature_scaled(x, y, snell, tau, medium, W, nz, ns, chunk=192):
    z0 = snell.z_prime
    t, w = leggauss(nz)
    Z1, Z2 = np.meshgrid(z0[0] + W * t, z0[1] + W * t, indexing="ij")
    ww = (np.outer(w, w) * W * W).ravel()
    zp = np.c_[Z1.ravel(), Z2.ravel()]
    val = 0.0
    grad = np.zeros(3)
    for i in range(0, len(zp), chunk):
        zz = zp[i:i + chunk]
        es, gs, r = refracted_kernel_scaled(x, zz, tau, medium, n=ns, gradient=True)
        lv, ry = _lxy(x, y, zz, medium)
        # es carries exp(tau r/sqrt(g-)); together with the upper factor
        # the exponent is exactly l_{x,y}(z') - l(x,y)
        fac = np.exp(-tau * (lv - snell.l_value)) / ry * ww[i:i + chunk]
        val += np.sum(es * fac)
        grad += np.sum(gs * fac[:, None], axis=0)
    pref = tau / (4 * np.pi * medium.gamma_plus)
    return pref * val, pref * grad


def phi_lower(x, y, tau, medium: LayeredMedium, method: str = "quadrature", rtol: float = 1e-8,
              excess: float = 40.0) -> PhiValue:
    """Fundamental solution ``Phi(x, y)`` for ``x3 < 0 < y3`` and its gradient in ``x``.

    Parameters
    ----------
    method : {"quadrature", "asymptotic"}
        ``quadrature`` integrates the refracted kernel against the upper
        free-space factor over a window around the Snell point.
        ``asymptotic`` returns the leading Laplace term.
    """
    x = as_point3(x, "x")
    y = as_point3(y, "y")
    if not tau >= 1.0:
        raise PreconditionError(f"tau must be >= 1, got {tau}")
    sn = snell_point(x, y, medium)
    if method == "asymptotic":
        if not medium.is_refracting:
            raise PreconditionError("asymptotic method needs gamma_plus < gamma_minus")
        zt = sn.z_tilde
        E0 = float(leading_amplitude_E0(x, sn.z_prime, medium)[0])
        pref = tau / (16 * np.pi**2 * medium.gamma_plus * medium.gamma_minus)
        amp = lambda z: pref * E0 / (sn.r_minus * sn.r_plus)
        # scaled form: evaluate the Laplace term relative to exp(-tau l)
        scaled = laplace_integral_2d(lambda z: 0.0, amp, sn, tau)
        direction = (x - zt) / sn.r_minus
        sgrad = scaled * (-tau / np.sqrt(medium.gamma_minus)) * direction
        e = np.exp(-tau * sn.l_value)
        return PhiValue(phi=scaled * e, grad_phi=sgrad * e, method="asymptotic", scaled_phi=scaled,
                        scaled_grad=sgrad, l_value=sn.l_value)
    if method != "quadrature":
        raise PreconditionError(f"unknown method {method!r}")
    W = _phi_window(x, y, sn, tau, medium, excess=excess)
    # inner node count: converge the kernel at the most demanding window point
    rim = np.array([[sn.z_prime[0] + W, sn.z_prime[1] + W], sn.z_prime])
    ns = 24
    while True:
        a, _, _ = refracted_kernel_scaled(x, rim, tau, medium, n=ns)
        b, _, _ = refracted_kernel_scaled(x, rim, tau, medium, n=int(1.5 * ns))
        if np.max(np.abs(a - b) / np.abs(b)) <= 0.1 * rtol:
            break
        ns = int(1.5 * ns)
        if ns > 400:
            raise NumericalFailure("inner kernel quadrature did not converge", estimates=(a[0], b[0]))
    nz = 24
    prev = _phi_quadrature_scaled(x, y, sn, tau, medium, W, nz, ns)
    while True:
        nz = int(1.5 * nz)
        cur = _phi_quadrature_scaled(x, y, sn, tau, medium, W, nz, ns)
        change = abs(cur[0] - prev[0]) / abs(cur[0])
        if change <= rtol:
            break
        if nz > 200:
            raise NumericalFailure(f"interface quadrature did not converge (change {change:.2e})",
                                   estimates=(prev[0], cur[0]))
        prev = cur
    # tail outside the disk is below exp(-excess) times the peak density
    tail = np.exp(-excess) * abs(cur[0])
    e = np.exp(-tau * sn.l_value)
    return PhiValue(phi=cur[0] * e, grad_phi=cur[1] * e, method="quadrature", scaled_phi=float(cur[0]),
                    scaled_grad=cur[1], l_value=sn.l_value, error_estimate=float(change * abs(cur[0]) + tail))
