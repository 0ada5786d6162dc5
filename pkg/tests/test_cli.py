import json
import subprocess
import sys

import numpy as np
import pytest

from layered_enclosure.cli import bundled_config, main, resolution_limit, run_scenario, validate_suite
from layered_enclosure.config import OUTPUT_ENV, load_config, parse_config
from layered_enclosure.errors import ConfigurationError
from layered_enclosure.forward import load_record

CHEAP = """
[medium]
gamma_plus = 1.0
gamma_minus = 2.0

[obstacle]
shape = ball
center = 0, 0, -0.6
radius = 0.25
contrast = {contrast}
n_boundary = 1024

[source]
center = 0, 0, 0.4
radius = 0.3

[horizon]
T = auto
margin = 0.6

[grid]
h = 0.1
sponge_cells = 8
margin = 0.4

[sweep]
taus = 4, 5, 6, 7, 8

[oracles]
enabled = sign_class lemma_bracket structure enclosure
bracket_taus = 6

[enclosure]
n = 24

[output]
directory = out
"""


def cheap(tmp_path, contrast=-0.8, name="cheap.cfg"):
    p = tmp_path / name
    p.write_text(CHEAP.format(contrast=contrast))
    return p


def test_bundled_config_resolves():
    cfg = load_config(bundled_config())
    d = cfg.scenario.distances()
    assert d.l_DB == pytest.approx(1.1 / np.sqrt(2) + 0.9, rel=1e-9)
    assert cfg.scenario.T == pytest.approx(2 * d.l_DB + 1.0, rel=1e-12)
    assert cfg.expected_sign_class == "A1"
    assert len(cfg.taus) == 12 and cfg.taus[0] == pytest.approx(10) and cfg.taus[-1] == pytest.approx(80)


def test_config_rejects_reversed_speeds(tmp_path):
    text = CHEAP.format(contrast=-0.8).replace("gamma_plus = 1.0", "gamma_plus = 3.0")
    with pytest.raises(ConfigurationError, match="gamma_plus < gamma_minus"):
        parse_config(text)
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    assert main(["geometry", str(p), "--dry-run"]) == 2


@pytest.mark.parametrize("edit, match", [
    (("contrast = -0.8", "contrast = -5"), r"^geometry: .*gamma_minus \+ c"),
    (("radius = 0.3", "radius = -1"), r"^geometry: .*source radius"),
    (("taus = 4, 5, 6, 7, 8", "taus = 4"), r"^\[sweep\]"),
    (("enabled = sign_class", "enabled = telepathy sign_class"), r"^\[oracles\].*telepathy"),
    (("h = 0.1", "h = abc"), r"^\[grid\] h = 'abc'"),
])
def test_config_rejects_bad_values(edit, match):
    text = CHEAP.format(contrast=-0.8).replace(*edit)
    with pytest.raises(ConfigurationError, match=match):
        parse_config(text)


def test_config_hash_tracks_parameters():
    a = parse_config(CHEAP.format(contrast=-0.8))
    b = parse_config(CHEAP.format(contrast=-0.8))
    c = parse_config(CHEAP.format(contrast=-0.7))
    assert a.config_hash == b.config_hash
    assert a.config_hash != c.config_hash


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
    cfg = load_config(cheap(tmp_path))
    assert cfg.output_dir == tmp_path / "elsewhere"


def test_geometry_dry_run(tmp_path, capsys):
    assert main(["geometry", str(cheap(tmp_path)), "--dry-run"]) == 0
    out = capsys.readouterr().out
    assert "l_DB" in out and "threshold_2l" in out and "z_prime_x0_p" in out


def test_missing_config_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 2


def test_error_message_names_module(tmp_path, capsys):
    p = tmp_path / "neg.cfg"
    p.write_text(CHEAP.format(contrast=-5.0))
    assert main(["geometry", str(p)]) == 2
    err = capsys.readouterr().err
    assert "geometry" in err and "gamma_minus + c" in err


def test_unknown_level_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["validate", "bogus"])
    assert info.value.code == 2
    with pytest.raises(ConfigurationError):
        validate_suite("bogus")


def test_module_entry_point_exit_code():
    r = subprocess.run([sys.executable, "-m", "layered_enclosure", "validate", "bogus"],
                       capture_output=True, text=True)
    assert r.returncode == 2


def test_validate_fast_passes(tmp_path):
    assert validate_suite("fast", out=tmp_path, log=lambda s: None) == 0
    lines = (tmp_path / "validate_fast.jsonl").read_text().splitlines()
    assert len(lines) >= 5
    assert all(json.loads(line)["passed"] for line in lines)


def test_resolution_limit():
    assert resolution_limit(80.0, 1.0, 0.05) == pytest.approx(2 / 80 * np.sqrt(1 / 0.95**2 - 1), rel=1e-14)
    assert resolution_limit(40.0, 1.0, 0.05) == pytest.approx(2 * resolution_limit(80.0, 1.0, 0.05))


def _run_outputs(tmp_path, name, contrast=-0.8):
    out = tmp_path / name
    cfg = load_config(cheap(tmp_path, contrast, name=f"{name}.cfg"))
    status = run_scenario(cfg, out, log=lambda s: None)
    return cfg, out, status


def test_run_writes_all_outputs(tmp_path):
    cfg, out, status = _run_outputs(tmp_path, "a")
    h = cfg.config_hash
    for f in ("record.rec", "indicator_curve.csv", "enclosure_mask.npz", "oracles.jsonl", "summary.json",
              "timings.txt"):
        assert (out / f).exists()
    assert load_record(out / "record.rec").meta["config_hash"] == h
    assert (out / "indicator_curve.csv").read_text().startswith(f"# config_hash={h}\n")
    assert (out / "timings.txt").read_text().startswith(f"# config_hash={h}\n")
    assert all(json.loads(line)["config_hash"] == h for line in (out / "oracles.jsonl").read_text().splitlines())
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config_hash"] == h
    assert str(np.load(out / "enclosure_mask.npz")["config_hash"]) == h
    for key in ("l_DB_true", "l_DB_est", "relative_error", "sign_class", "tolerances"):
        assert key in summary
    assert summary["sign_class"] == "A1"
    assert status == (0 if summary["passed"] else 1)


def test_runs_are_bit_identical(tmp_path):
    _, a, _ = _run_outputs(tmp_path, "first")
    _, b, _ = _run_outputs(tmp_path, "second")
    for f in ("indicator_curve.csv", "oracles.jsonl", "summary.json", "record.rec"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    ma, mb = np.load(a / "enclosure_mask.npz"), np.load(b / "enclosure_mask.npz")
    assert np.array_equal(ma["mask"], mb["mask"])


def test_null_run_reports_control(tmp_path):
    _, out, status = _run_outputs(tmp_path, "null", contrast=0.0)
    reports = [json.loads(line) for line in (out / "oracles.jsonl").read_text().splitlines()]
    null = [r for r in reports if r["name"] == "null_control"]
    assert len(null) == 1 and null[0]["passed"]
    assert status == 0


def test_validate_full_coarse_grid_reports_resolution(tmp_path):
    assert validate_suite("full", grid_scale=2.0, out=tmp_path, log=lambda s: None) == 1
    reports = [json.loads(line) for line in (tmp_path / "validate_full.jsonl").read_text().splitlines()]
    slope = [r for r in reports if r["name"].startswith("slope_")]
    assert slope and not any(r["passed"] for r in slope)
    assert all("needs h <=" in r["details"]["resolution"] for r in slope)
