"""Plain text scenario configuration.

INI syntax with the sections ``medium``, ``obstacle``, ``source``,
``horizon``, ``grid``, ``sweep``, ``oracles``, ``enclosure``, ``output``
and ``run``.  Every value is checked at load time, and the automatic
horizon is resolved through the optical distance before any solve.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, EnclosureError, origin_module
from .geometry import LayeredMedium, ObstacleSpec, SourceBall, optical_distance_sets
from .indicator import default_taus
from .scenario import GridParams, Scenario

__all__ = ["ScenarioConfig", "load_config", "parse_config", "OUTPUT_ENV", "KNOWN_ORACLES"]

OUTPUT_ENV = "LAYERED_ENCLOSURE_OUTPUT"
KNOWN_ORACLES = ("slope", "sign_class", "lemma_bracket", "structure", "enclosure")


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved configuration of one batch run."""

    scenario: Scenario
    taus: np.ndarray
    v_method: str
    oracles: tuple
    bracket_taus: tuple
    slope_tol: float
    enclosure_n: int
    enclosure_pad: float
    output_dir: Path
    seed: int
    horizon_mode: str

    def resolved(self) -> dict:
        """Every parameter after defaults and the automatic horizon are applied."""
        return {
            "scenario": self.scenario.describe(),
            "taus": self.taus.tolist(),
            "v_method": self.v_method,
            "oracles": list(self.oracles),
            "bracket_taus": list(self.bracket_taus),
            "slope_tol": self.slope_tol,
            "enclosure": {"n": self.enclosure_n, "pad": self.enclosure_pad},
            "seed": self.seed,
            "horizon_mode": self.horizon_mode,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def expected_sign_class(self) -> str:
        c = self.scenario.obstacle.contrast
        return "A1" if c < 0 else ("A2" if c > 0 else "none")


def _get(cp, section, key, conv, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigurationError(f"[{section}] {key}: missing")
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _floats(raw: str) -> list:
    return [float(v) for v in raw.replace(",", " ").split()]


def _point(raw: str) -> tuple:
    v = _floats(raw)
    if len(v) != 3:
        raise ValueError("expected three numbers")
    return tuple(v)


def _bool(raw: str) -> bool:
    r = raw.strip().lower()
    if r in ("1", "yes", "true", "on"):
        return True
    if r in ("0", "no", "false", "off"):
        return False
    raise ValueError("expected a boolean")


def parse_config(text: str, base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from INI text.

    Raises
    ------
    ConfigurationError
        For missing or malformed keys and for any scenario that fails a
        module precondition, including ``gamma_plus >= gamma_minus``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable config: {exc}") from None
    gp = _get(cp, "medium", "gamma_plus", float, required=True)
    gm = _get(cp, "medium", "gamma_minus", float, required=True)
    if not gp < gm:
        raise ConfigurationError(
            f"[medium] gamma_plus = {gp} must be smaller than gamma_minus = {gm}; the enclosure "
            "argument assumes gamma_plus < gamma_minus across the interface")
    try:
        medium = LayeredMedium(gp, gm)
        shape = _get(cp, "obstacle", "shape", str, "ball").strip()
        contrast = _get(cp, "obstacle", "contrast", float, required=True)
        nb = _get(cp, "obstacle", "n_boundary", int, 4096)
        if shape == "ball":
            params = (_get(cp, "obstacle", "center", _point, required=True),
                      _get(cp, "obstacle", "radius", float, required=True))
        elif shape == "box":
            params = (_get(cp, "obstacle", "lo", _point, required=True),
                      _get(cp, "obstacle", "hi", _point, required=True))
        else:
            raise ConfigurationError(f"[obstacle] shape = {shape!r}: expected ball or box")
        obstacle = ObstacleSpec(shape, params, contrast=contrast, n_boundary=nb)
        source = SourceBall(_get(cp, "source", "center", _point, required=True),
                            _get(cp, "source", "radius", float, required=True),
                            amplitude=_get(cp, "source", "amplitude", float, 1.0),
                            taper=_get(cp, "source", "taper", _bool, True))
        raw_T = _get(cp, "horizon", "T", str, "auto").strip().lower()
        if raw_T == "auto":
            hm = _get(cp, "horizon", "margin", float, 1.0)
            T = 2.0 * optical_distance_sets(obstacle, source, medium).l_DB + hm
            horizon_mode = f"2l+{hm!r}"
        else:
            T = _get(cp, "horizon", "T", float)
            horizon_mode = "fixed"
        raw_margin = _get(cp, "grid", "margin", str, "auto").strip().lower()
        grid = GridParams(h=_get(cp, "grid", "h", float, 0.05),
                          sponge_cells=_get(cp, "grid", "sponge_cells", int, 20),
                          safety=_get(cp, "grid", "safety", float, 0.9),
                          margin=None if raw_margin == "auto" else _get(cp, "grid", "margin", float),
                          max_cells=_get(cp, "grid", "max_cells", int, 40_000_000))
        scenario = Scenario(medium, obstacle, source, float(T), grid)
    except ConfigurationError:
        raise
    except EnclosureError as exc:
        raise ConfigurationError(f"{origin_module(exc)}: {type(exc).__name__}: {exc}") from None

    if cp.has_option("sweep", "taus"):
        taus = np.asarray(_get(cp, "sweep", "taus", _floats), float)
    else:
        taus = default_taus(_get(cp, "sweep", "n", int, 12), _get(cp, "sweep", "tau_min", float, 10.0),
                            _get(cp, "sweep", "tau_max", float, 80.0))
    if len(taus) < 2 or np.any(taus < 1.0):
        raise ConfigurationError("[sweep] needs at least two values of tau, all >= 1")
    taus = np.sort(taus)
    v_method = _get(cp, "sweep", "v_method", str, "two_run").strip()
    if v_method not in ("two_run", "elliptic"):
        raise ConfigurationError(f"[sweep] v_method = {v_method!r}: expected two_run or elliptic")
    slope_tol = _get(cp, "sweep", "slope_tol", float, 0.05)

    enabled = _get(cp, "oracles", "enabled", lambda s: tuple(s.replace(",", " ").split()), KNOWN_ORACLES)
    bad = [o for o in enabled if o not in KNOWN_ORACLES]
    if bad:
        raise ConfigurationError(f"[oracles] enabled: unknown {bad}; known {list(KNOWN_ORACLES)}")
    bracket_taus = tuple(_get(cp, "oracles", "bracket_taus", _floats, [20.0, 40.0]))

    out = _get(cp, "output", "directory", str, "results").strip()
    out = Path(os.environ.get(OUTPUT_ENV, out))
    if not out.is_absolute() and base_dir is not None and OUTPUT_ENV not in os.environ:
        out = Path(base_dir) / out
    return ScenarioConfig(
        scenario=scenario,
        taus=taus,
        v_method=v_method,
        oracles=tuple(enabled),
        bracket_taus=bracket_taus,
        slope_tol=slope_tol,
        enclosure_n=_get(cp, "enclosure", "n", int, 64),
        enclosure_pad=_get(cp, "enclosure", "pad", float, 0.2),
        output_dir=out,
        seed=_get(cp, "run", "seed", int, 0),
        horizon_mode=horizon_mode,
    )


def load_config(path) -> ScenarioConfig:
    """Read and resolve a configuration file; relative output paths are
    taken from the current directory."""
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {p} not found")
    return parse_config(p.read_text(), base_dir=Path.cwd())
