"""Command line runner.

Verbs
-----
``run <config>``
    Forward solve, indicator sweep, slope estimate, enclosure region and
    oracles; writes every artifact to the output directory.
``validate fast|full``
    Brute force geometry and kernel checks; ``full`` adds the time domain
    reference scenarios.
``geometry <config> --dry-run``
    Resolved optical distances only.

Exit status: 0 pass, 1 oracle failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ScenarioConfig, load_config
from .errors import (ConfigurationError, ContractError, EnclosureError, InstabilityError, NumericalFailure,
                     PreconditionError, ResolutionError, origin_module)
from .forward import save_record, simulate
from .geometry import LayeredMedium, enclosure_region, hessian_closed_form, snell_point
from .indicator import IndicatorCurve, residual_indicator, tau_sweep, write_curve_csv
from .kernel import equal_speed_kernel, phi_lower, refracted_kernel_quadrature
from .oracle import (OracleReport, brute_force_snell, fd_hessian, gradient_norm_bracket, lemma11_bracket,
                     minimizer_structure_check, order_fit, write_reports)
from .scenario import reference_scenario

__all__ = ["main", "run_scenario", "validate_suite", "bundled_config", "resolution_limit"]

EXIT_OK, EXIT_ORACLE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def bundled_config(name: str = "ball_vertical.cfg") -> Path:
    return Path(str(resources.files("layered_enclosure") / "data" / name))


def resolution_limit(tau: float, speed: float, tol: float) -> float:
    """Largest cell size for which the seven point stencil keeps the decay
    rate of ``exp(-tau |x| / speed)`` within ``tol``.

    The discrete decay rate is ``(2/h) asinh(tau h / (2 speed))``; its local
    slope relative to the continuous one is ``1/sqrt(1 + (tau h/2 speed)^2)``.
    """
    return 2.0 * speed / tau * np.sqrt(1.0 / (1.0 - tol) ** 2 - 1.0)


def _enclosure_box(cfg: ScenarioConfig):
    lo, hi = cfg.scenario.obstacle.bounding_box()
    lo = lo - cfg.enclosure_pad
    hi = hi + cfg.enclosure_pad
    hi[2] = min(hi[2], -1e-3)
    return lo, hi


def _slope_report(curve: IndicatorCurve, l_true: float, tol: float, h: float, speed: float) -> OracleReport:
    target = -2.0 * l_true
    rel = abs(curve.slope_estimate - target) / abs(target) if np.isfinite(curve.slope_estimate) else float("inf")
    tau_mid = float(np.exp(np.mean(np.log(curve.taus[curve.fit_mask])))) if curve.fit_mask.any() else float("nan")
    h_need = resolution_limit(tau_mid, speed, tol) if np.isfinite(tau_mid) else float("nan")
    diag = {"fit_window_tau": tau_mid, "h": h, "h_required": h_need,
            "predicted_dispersion_factor": 1.0 / np.sqrt(1.0 + (tau_mid * h / (2 * speed)) ** 2)}
    if rel > tol:
        diag["resolution"] = (f"slope error {rel:.3f} exceeds {tol}; the stencil decay rate at tau = "
                              f"{tau_mid:.1f} needs h <= {h_need:.4f} (current {h})")
    return OracleReport("slope", {"tol": tol}, {"slope": curve.slope_estimate, "relative_error": rel},
                        {"slope": target, "l_DB": l_true}, tol, bool(rel <= tol), details=diag)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def run_scenario(cfg: ScenarioConfig, out: Optional[Path] = None, log=print) -> int:
    """Full pipeline for one configuration; returns the exit status."""
    out = Path(cfg.output_dir if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario
    chash = cfg.config_hash
    timings = {}
    t0 = time.perf_counter()
    dist = sc.distances()
    timings["geometry"] = time.perf_counter() - t0
    log(f"l(D,B) = {dist.l_DB:.6f}  2l = {dist.threshold_time:.6f}  T = {sc.T:.6f}")

    t0 = time.perf_counter()
    want_bracket = "lemma_bracket" in cfg.oracles and sc.obstacle.contrast != 0.0
    rec = simulate(sc, tau_max=float(cfg.taus.max()),
                   laplace_taus=cfg.bracket_taus if want_bracket else (),
                   laplace_region=sc.obstacle if want_bracket else None)
    timings["forward"] = time.perf_counter() - t0
    save_record(rec, out / "record.rec", config_hash=chash)

    t0 = time.perf_counter()
    curve = tau_sweep(sc, cfg.taus, record=rec, v_method=cfg.v_method)
    timings["sweep"] = time.perf_counter() - t0
    write_curve_csv(curve, out / "indicator_curve.csv", config_hash=chash)

    reports = []
    c = sc.obstacle.contrast
    speed = float(np.sqrt(sc.medium.gamma_plus))
    if c == 0.0:
        u = rec.samples
        scale = float(np.max(np.abs([rec.amplitude * np.sum(rec.weights * (u @ np.exp(-t * rec.times)))
                                     * rec.dt for t in curve.taus])))
        worst = float(np.max(np.abs(curve.values))) if len(curve.values) else 0.0
        reports.append(OracleReport("null_control", {}, worst, 0.0, 1e-6 * scale, bool(worst <= 1e-6 * scale)))
    else:
        if "slope" in cfg.oracles:
            reports.append(_slope_report(curve, dist.l_DB, cfg.slope_tol, sc.grid.h, speed))
        if "sign_class" in cfg.oracles:
            reports.append(OracleReport("sign_class", {"contrast": c}, curve.sign_class,
                                        cfg.expected_sign_class, "exact",
                                        curve.sign_class == cfg.expected_sign_class))
        if want_bracket:
            t0 = time.perf_counter()
            for tau in cfg.bracket_taus:
                reports.append(lemma11_bracket(sc, tau, rec))
            timings["lemma_bracket"] = time.perf_counter() - t0
    if "structure" in cfg.oracles:
        reports.append(minimizer_structure_check(sc, seed=cfg.seed))

    mask_info = {}
    l_est = curve.l_estimate
    if "enclosure" in cfg.oracles or c != 0.0:
        if np.isfinite(l_est) and l_est > 0:
            t0 = time.perf_counter()
            region = enclosure_region(l_est, sc.source, sc.medium, _enclosure_box(cfg), n=cfg.enclosure_n)
            timings["enclosure"] = time.perf_counter() - t0
            cov, n_in = region.obstacle_coverage(sc.obstacle)
            np.savez(out / "enclosure_mask.npz", mask=region.mask, x=region.axes[0], y=region.axes[1],
                     z=region.axes[2], threshold=region.threshold, config_hash=np.array(chash))
            mask_info = {"coverage": cov, "nodes_in_D": n_in, "threshold": region.threshold}
            if "enclosure" in cfg.oracles:
                reports.append(OracleReport("enclosure", {"n": cfg.enclosure_n, "l_estimate": l_est},
                                            cov, 1.0, 0.99, bool(cov >= 0.99)))
        elif "enclosure" in cfg.oracles and c != 0.0:
            reports.append(OracleReport("enclosure", {"l_estimate": l_est}, None, 1.0, 0.99, False,
                                        details={"reason": "no usable slope estimate"}))
    write_reports(reports, out / "oracles.jsonl", config_hash=chash)

    rel = abs(l_est - dist.l_DB) / dist.l_DB if np.isfinite(l_est) else None
    summary = {
        "config_hash": chash,
        "config": cfg.resolved(),
        "l_DB_true": dist.l_DB,
        "l_DB_est": l_est if np.isfinite(l_est) else None,
        "relative_error": rel,
        "slope_estimate": curve.slope_estimate if np.isfinite(curve.slope_estimate) else None,
        "sign_class": curve.sign_class,
        "expected_sign_class": cfg.expected_sign_class,
        "tolerances": {"slope": cfg.slope_tol, "enclosure_coverage": 0.99, "bracket_rel_slack": 5e-2},
        "enclosure": mask_info,
        "dt": rec.dt,
        "n_steps": rec.n_steps,
        "notes": curve.notes,
        "oracles": {r.name + (f"@{r.params['tau']:g}" if r.name == "lemma11_bracket" else ""): r.passed
                    for r in reports},
        "passed": all(r.passed for r in reports),
    }
    _write_json(out / "summary.json", summary)
    with open(out / "timings.txt", "w") as fh:
        fh.write(f"# config_hash={chash}\n")
        for k, v in timings.items():
            fh.write(f"{k} {v:.3f}\n")
    for r in reports:
        log(f"{'PASS' if r.passed else 'FAIL'} {r.name} measured={json.dumps(r.to_dict()['measured'])}")
    log(f"l_est = {l_est:.6f}  sign_class = {curve.sign_class}  outputs in {out}")
    return EXIT_OK if summary["passed"] else EXIT_ORACLE


def _fast_checks(seed: int, log) -> list:
    rng = np.random.default_rng(seed)
    reports = []
    t0 = time.perf_counter()
    worst = {"z": 0.0, "l": 0.0, "hess": 0.0, "resid": 0.0, "gain": -np.inf}
    for _ in range(100):
        gp = rng.uniform(0.5, 2.0)
        med = LayeredMedium(gp, gp * rng.uniform(1.05, 4.0))
        x = np.array([*rng.uniform(-1, 1, 2), -rng.uniform(0.1, 2.0)])
        y = np.array([*rng.uniform(-1, 1, 2), rng.uniform(0.1, 2.0)])
        s = snell_point(x, y, med)
        z, lval, gain = brute_force_snell(x, y, med)
        H = hessian_closed_form(x, y, s, med)[0]
        Hf = fd_hessian(x, y, s.z_prime[:2], med)
        worst["z"] = max(worst["z"], float(np.abs(z - s.z_prime[:2]).max()))
        worst["l"] = max(worst["l"], abs(lval - s.l_value))
        worst["hess"] = max(worst["hess"], float(np.abs(H - Hf).max() / np.abs(H).max()))
        worst["resid"] = max(worst["resid"], s.snell_residual)
        worst["gain"] = max(worst["gain"], gain)
    ok = worst["z"] <= 1e-6 and worst["l"] <= 1e-9 and worst["hess"] <= 1e-6 and worst["resid"] <= 1e-10 \
        and worst["gain"] <= 1e-9
    reports.append(OracleReport("snell_suite", {"n": 100}, worst, 0.0,
                                {"z": 1e-6, "l": 1e-9, "hess": 1e-6, "resid": 1e-10, "gain": 1e-9}, ok, seed=seed,
                                details={"seconds": None}))
    log(f"snell suite {time.perf_counter() - t0:.1f}s")

    t0 = time.perf_counter()
    med = LayeredMedium(1.0, 2.0)
    orders = []
    for _ in range(5):
        x = np.array([*rng.uniform(-1, 1, 2), -rng.uniform(0.3, 2.0)])
        zp = rng.uniform(-1, 1, 2)
        rem = [refracted_kernel_quadrature(x, zp, t, med).rel_remainder for t in (20.0, 40.0, 80.0)]
        orders.append(order_fit([20, 40, 80], rem))
    orders = np.array(orders)
    reports.append(OracleReport("kernel_remainder_order", {"n": 5, "taus": [20, 40, 80]}, orders, 1.0, 0.3,
                                bool(np.all(np.abs(orders - 1.0) <= 0.3)), seed=seed))
    eq = LayeredMedium(1.5, 1.5)
    errs = []
    for _ in range(5):
        x = np.array([*rng.uniform(-1, 1, 2), -rng.uniform(0.3, 2.0)])
        zp = rng.uniform(-1, 1, 2)
        q = refracted_kernel_quadrature(x, zp, 50.0, eq).value
        e = equal_speed_kernel(x, zp, 50.0, 1.5)
        errs.append(abs(q - e) / abs(e))
    reports.append(OracleReport("equal_speed_kernel", {"n": 5, "tau": 50.0}, max(errs), 0.0, 1e-5,
                                bool(max(errs) <= 1e-5), seed=seed))
    po, go = [], []
    for _ in range(4):
        x = np.array([*rng.uniform(-1, 1, 2), -rng.uniform(0.3, 2.0)])
        y = np.array([*rng.uniform(-1, 1, 2), rng.uniform(0.3, 2.0)])
        rp, rg = [], []
        for t in (20.0, 40.0, 80.0):
            q = phi_lower(x, y, t, med)
            a = phi_lower(x, y, t, med, method="asymptotic")
            rp.append(abs(q.phi - a.phi) / abs(q.phi))
            rg.append(np.linalg.norm(q.grad_phi - a.grad_phi) / np.linalg.norm(q.grad_phi))
        po.append(order_fit([20, 40, 80], rp))
        go.append(order_fit([20, 40, 80], rg))
    for name, o in (("phi_remainder_order", po), ("grad_phi_remainder_order", go)):
        o = np.array(o)
        reports.append(OracleReport(name, {"n": 4, "taus": [20, 40, 80]}, o, 1.0, 0.3,
                                    bool(np.all(np.abs(o - 1.0) <= 0.3)), seed=seed))
    log(f"kernel checks {time.perf_counter() - t0:.1f}s")
    for r in reports:
        r.details.pop("seconds", None)
    return reports


def _full_checks(grid_scale: float, log) -> list:
    reports = []
    h = 0.05 * grid_scale
    base = reference_scenario(h=h)
    l_true = base.distances().l_DB
    taus = np.geomspace(10.0, 80.0, 12)
    for c, cls in ((-0.8, "A1"), (1.0, "A2")):
        sc = base.with_contrast(c)
        t0 = time.perf_counter()
        rec = simulate(sc, tau_max=80.0, laplace_taus=[20.0, 40.0], laplace_region=sc.obstacle)
        curve = tau_sweep(sc, taus, record=rec)
        log(f"reference run c = {c:+.1f} at h = {h}: {time.perf_counter() - t0:.0f}s")
        rep = _slope_report(curve, l_true, 0.05, h, 1.0)
        rep.name = f"slope_c{c:+.1f}"
        reports.append(rep)
        reports.append(OracleReport(f"sign_class_c{c:+.1f}", {"contrast": c}, curve.sign_class, cls, "exact",
                                    curve.sign_class == cls))
        for tau in (20.0, 40.0):
            r = lemma11_bracket(sc, tau, rec)
            r.name = f"lemma11_bracket_c{c:+.1f}"
            reports.append(r)
        if c < 0:
            vals = {}
            for dT in (-0.5, 0.5):
                T = 2 * l_true + dT
                vals[dT] = [abs(residual_indicator(rec, tau, T, shift=T)) for tau in (20.0, 40.0)]
            ok = vals[-0.5][1] < vals[-0.5][0] and vals[0.5][1] > vals[0.5][0]
            reports.append(OracleReport("threshold", {"taus": [20, 40]}, {str(k): v for k, v in vals.items()},
                                        "decreasing below, increasing above", None, bool(ok)))
    eh = 0.025 * grid_scale
    t0 = time.perf_counter()
    try:
        reports.append(gradient_norm_bracket(base, h=eh))
    except ResolutionError as exc:
        reports.append(OracleReport("gradient_norm_bracket", {"h": eh}, None, None, None, False,
                                    details={"resolution": str(exc)}))
    log(f"gradient energy rate {time.perf_counter() - t0:.0f}s")
    return reports


def validate_suite(level: str, grid_scale: float = 1.0, out: Optional[Path] = None, seed: int = 0,
                   log=print) -> int:
    """Run the validation oracles; returns the exit status."""
    if level not in ("fast", "full"):
        raise ConfigurationError(f"unknown validation level {level!r}; expected fast or full")
    reports = _fast_checks(seed, log)
    if level == "full":
        reports += _full_checks(grid_scale, log)
    for r in reports:
        msg = f"{'PASS' if r.passed else 'FAIL'} {r.name}"
        if not r.passed and "resolution" in r.details:
            msg += f"  [{r.details['resolution']}]"
        log(msg)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_reports(reports, Path(out) / f"validate_{level}.jsonl", config_hash=f"validate-{level}-{seed}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_ORACLE


def geometry_report(cfg: ScenarioConfig, log=print) -> dict:
    sc = cfg.scenario
    d = sc.distances()
    info = {
        "l_DB": d.l_DB,
        "l_Dp": d.l_Dp,
        "x0": d.x0.tolist(),
        "y0": d.y0.tolist(),
        "z_prime_x0_p": d.z0.tolist(),
        "threshold_2l": d.threshold_time,
        "T": sc.T,
        "config_hash": cfg.config_hash,
    }
    for k, v in info.items():
        log(f"{k} = {v}")
    return info


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layered-enclosure", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="solve, sweep, estimate and enclose")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides the config)")
    v = sub.add_parser("validate", help="run the validation oracles")
    v.add_argument("level", choices=["fast", "full"])
    v.add_argument("--grid-scale", type=float, default=1.0, help="multiply the reference cell sizes")
    v.add_argument("--output", help="write oracle reports here")
    v.add_argument("--seed", type=int, default=0)
    g = sub.add_parser("geometry", help="resolved optical distances")
    g.add_argument("config")
    g.add_argument("--dry-run", action="store_true", help="geometry only, no solve (the default)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "run":
            cfg = load_config(args.config)
            return run_scenario(cfg, Path(args.output) if args.output else None)
        if args.verb == "validate":
            return validate_suite(args.level, args.grid_scale, args.output, args.seed)
        cfg = load_config(args.config)
        geometry_report(cfg)
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error ({origin_module(exc)}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, InstabilityError, ResolutionError) as exc:
        print(f"numerical failure ({origin_module(exc)}): {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PreconditionError, ContractError) as exc:
        print(f"invalid input ({origin_module(exc)}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnclosureError as exc:
        print(f"error ({origin_module(exc)}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
