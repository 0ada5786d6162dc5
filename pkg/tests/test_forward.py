import numpy as np
import pytest

from layered_enclosure.errors import ConfigurationError, InstabilityError, PreconditionError
from layered_enclosure.forward import (
    build_grid,
    cfl_dt,
    load_record,
    run,
    save_record,
    simulate,
)
from layered_enclosure.geometry import LayeredMedium, ObstacleSpec, SourceBall
from layered_enclosure.indicator import laplace_time_transform
from layered_enclosure.scenario import GridParams, Scenario, reference_scenario

MED = LayeredMedium(1.0, 2.0)


def small(contrast=-0.8, h=0.1, amplitude=1.0, **grid):
    grid.setdefault("sponge_cells", 10)
    return Scenario(MED, ObstacleSpec("ball", ((0, 0, -0.6), 0.25), contrast=contrast),
                    SourceBall((0, 0, 0.4), 0.3, amplitude=amplitude), 1.6, GridParams(h=h, **grid))


def test_cfl_dt_formula():
    grid = build_grid(small(contrast=1.0))
    assert cfl_dt(grid, 0.9) == pytest.approx(0.9 * 0.1 / np.sqrt(3 * 3.0), rel=1e-14)
    assert cfl_dt(grid, 0.5) == pytest.approx(cfl_dt(grid, 1.0) / 2, rel=1e-14)


def test_grid_contains_margin_and_sponge():
    sc = reference_scenario()
    grid = build_grid(sc)
    lo, hi = grid.physical_extent()
    assert np.all(lo <= np.array([-0.4, -0.4, -1.9]) - 0.5 + 1e-12)
    assert np.all(hi >= np.array([0.4, 0.4, 1.5]) + 0.5 - 1e-12)
    assert grid.shape == (76, 76, 128)


def test_obstacle_cell_volume():
    grid = build_grid(reference_scenario())
    vol = grid.obstacle_mask.sum() * grid.h**3
    assert vol == pytest.approx(4 / 3 * np.pi * 0.4**3, rel=0.1)
    assert np.allclose(grid.gamma[grid.obstacle_mask], 2.0 - 0.8)


def test_zero_contrast_keeps_background():
    grid = build_grid(small(contrast=0.0))
    assert np.array_equal(grid.gamma, grid.gamma0)


def test_interface_is_a_face():
    grid = build_grid(small())
    z = grid.axis(2)
    assert np.all(np.abs(z) >= grid.h / 2 - 1e-12)
    assert np.all(grid.gamma0[:, :, z > 0] == 1.0) and np.all(grid.gamma0[:, :, z < 0] == 2.0)


def test_cell_budget_is_enforced():
    with pytest.raises(ConfigurationError):
        build_grid(small(max_cells=1000))


def test_zero_contrast_has_no_scattered_field():
    rec = simulate(small(contrast=0.0))
    assert np.all(rec.component("scattered") == 0.0)
    assert np.max(np.abs(rec.component("background"))) > 0


def test_source_must_be_nonzero():
    with pytest.raises(PreconditionError):
        SourceBall((0, 0, 1), 0.2, amplitude=0.0)


def test_energy_conserved_without_sponge():
    sc = small(sponge_cells=0, margin=0.3)
    grid = build_grid(sc)
    rec = run(grid, sc.source, 1.6, split=False, energy_every=5)
    e = rec.energy[:, 1]
    assert np.max(np.abs(e - e[0])) <= 1e-3 * e[0]


def test_arrival_time_uniform_medium():
    # a nearly point-like untapered source one cell wide; the arrival is
    # picked as the peak of the leading pulse
    g = 1.5
    h = 0.05
    c = np.array([0.025, 0.025, 0.525])
    sc = Scenario(LayeredMedium(g, g), ObstacleSpec("ball", ((0, 0, -0.6), 0.2), contrast=0.0),
                  SourceBall(c, 0.06, taper=False), 1.2, GridParams(h=h, margin=None, sponge_cells=10))
    probes = np.array([[0.925, 0.025, 0.525], [0.625, 0.625, 0.525], [0.425, -0.375, 0.825]])
    rec = run(build_grid(sc), sc.source, 1.2, split=False, probes=probes)
    for p, v in zip(probes, rec.probes["values"]):
        d = np.linalg.norm(p - c)
        t_pick = rec.times[np.argmax(v)]
        assert abs(t_pick - d / np.sqrt(g)) <= 2 * h / np.sqrt(g)


def test_linear_in_amplitude():
    a = simulate(small())
    b = simulate(small(amplitude=2.0))
    for k in ("background", "scattered"):
        assert np.allclose(b.components[k], 2.0 * a.components[k], rtol=1e-12, atol=0.0)
    assert np.allclose(a.weights, b.weights, rtol=1e-14)


def test_mirror_symmetry():
    rec = simulate(small())
    pos = {tuple(i): n for n, i in enumerate(rec.index)}
    u = rec.samples
    scale = np.abs(u).max()
    checked = 0
    for n, (i, j, k) in enumerate(rec.index):
        for m in ((-1 - i, j, k), (i, -1 - j, k), (j, i, k)):
            assert np.max(np.abs(u[n] - u[pos[m]])) <= 1e-10 * scale
            checked += 1
    assert checked == 3 * len(rec.index)


def test_split_matches_total():
    sc = small()
    grid = build_grid(sc)
    split = run(grid, sc.source, 1.0)
    total = run(grid, sc.source, 1.0, split=False)
    scale = np.abs(total.samples).max()
    assert np.max(np.abs(split.samples - total.samples)) <= 1e-10 * scale


def test_grid_convergence_of_transform():
    q = []
    for h in (0.1, 0.05, 0.025):
        rec = simulate(small(h=h, margin=None), tau_max=5.0)
        w = laplace_time_transform(rec, 5.0)
        q.append(float(np.sum(w.weights * w.values)))
    ratio = (q[0] - q[1]) / (q[1] - q[2])
    assert abs(ratio) >= 3.0


def test_scattered_field_is_causal(ref_a1, l_ref):
    sc, rec = ref_a1
    u = rec.component("scattered")
    early = rec.times < 2 * l_ref * (1 - 3 * rec.h)
    assert np.max(np.abs(u[:, early])) <= 1e-8 * np.max(np.abs(rec.samples))
    assert np.max(np.abs(u[:, ~early])) > 1e-8 * np.max(np.abs(rec.samples))


def test_record_round_trip(tmp_path):
    rec = simulate(small())
    p = tmp_path / "r.rec"
    save_record(rec, p, config_hash="abc")
    back = load_record(p)
    assert back.meta["config_hash"] == "abc"
    assert back.dt == rec.dt and back.T == rec.T and back.h == rec.h
    for k in rec.components:
        assert np.array_equal(back.components[k], rec.components[k])
    assert np.array_equal(back.index, rec.index)
    assert np.array_equal(back.weights, rec.weights)


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.rec"
    p.write_bytes(b"not a record")
    with pytest.raises(ConfigurationError):
        load_record(p)


def test_unstable_step_raises():
    sc = small()
    grid = build_grid(sc)
    with pytest.raises(InstabilityError) as info:
        run(grid, sc.source, 40.0, safety=1.5, check_every=20, split=False)
    assert info.value.step is not None


def test_dt_cap_from_tau_max():
    rec = simulate(small(), tau_max=40.0)
    assert rec.dt <= 0.1 / 40.0
    assert rec.n_steps * rec.dt == pytest.approx(1.6, rel=1e-12)
