import numpy as np
import pytest

from nullwave import fields, solver
from nullwave.geometry import ObstacleShape, build_grid
from nullwave.initdata import Bump, DataProfile, sample_data, zero_profile
from nullwave.nullforms import cubic_term, preset

DISK = ObstacleShape("disk", 0.4)


def _grid(h=0.1, R=8.0, shape=DISK):
    return build_grid(shape, h, R)


def _profile(eps=0.1, M=1, M0=3.0):
    u0 = [[Bump((1.8, 0.0), 1.1)], [Bump((-1.2, 1.2), 1.0)]][:M]
    return DataProfile(u0, [[] for _ in range(M)], eps, M0)


def _run_to(grid, tensor, prof, T, **kw):
    cfg = solver.SolverConfig(T_final=T, sample_every=10 ** 9, **kw)
    return solver.run(grid, tensor, prof, cfg)[1]


def test_zero_stays_zero():
    g = _grid()
    st_ = _run_to(g, preset("wavemap"), zero_profile(2), 2.0)
    assert not st_.cur.any() and not st_.prev.any()


def test_free_space_twin_run():
    T = 1.0
    prof = DataProfile([[Bump((3.0, 0.0), 1.2)]], [[]], 0.1, 4.5)
    diffs = []
    for h in (0.1, 0.05):
        with_obst = _run_to(_grid(h, 6.0), preset("linear"), prof, T)
        tiny = build_grid(ObstacleShape("disk", 1e-9), h, 6.0, allow_coarse=True)
        free = _run_to(tiny, preset("linear"), prof, T)
        diffs.append(np.max(np.abs(with_obst.cur - free.cur)))
        assert diffs[-1] <= h * h * np.max(np.abs(free.cur))


def test_mms_forcing_linear_formula():
    g = _grid(0.1, 6.0)
    b = Bump((2.5, 0.0), 1.5)
    f = solver.mms_forcing([solver.MMSComponent(b, 1.0)], preset("linear"), g)
    t = 0.7
    bb, _, _, lap = b.derivatives(g.X1, g.X2)
    expect = (-np.sin(t) * bb - np.sin(t) * lap) * g.active
    assert np.allclose(f.evaluate(t)[0], expect, atol=1e-14)
    zero = solver.mms_forcing([solver.MMSComponent(Bump((2.5, 0.0), 1.5, 0.0), 1.0)],
                              preset("linear"), g)
    assert not zero.evaluate(t).any()


def test_mms_forcing_cubic_correction():
    g = _grid(0.1, 6.0)
    b = Bump((2.5, 0.0), 1.5)
    comps = [solver.MMSComponent(b, 2.0)]
    lin = solver.mms_forcing(comps, preset("linear"), g).evaluate(0.3).copy()
    cub = solver.mms_forcing(comps, preset("cubic"), g).evaluate(0.3)
    bb, g1, g2, _ = b.derivatives(g.X1, g.X2)
    u = np.sin(0.6) * bb[None]
    du = np.stack([2 * np.cos(0.6) * bb, np.sin(0.6) * g1, np.sin(0.6) * g2])[None]
    corr = -cubic_term(preset("cubic"), u, du) * g.active
    assert np.allclose(cub - lin, corr, atol=1e-15)


def test_mms_rejects_support_on_obstacle():
    with pytest.raises(ValueError, match="obstacle"):
        solver.mms_forcing([solver.MMSComponent(Bump((0.5, 0.0), 0.5))], preset("linear"), _grid())


def test_mms_second_order_two_levels():
    from nullwave.acceptance import mms_error
    e1, e2 = mms_error(0.1, T=0.5), mms_error(0.05, T=0.5)
    assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.2)


def test_T_zero_single_record():
    g = _grid()
    cfg = solver.SolverConfig(T_final=0.0)
    rec, st_ = solver.run(g, preset("linear"), _profile(), cfg, lambda s, gr: s.t)
    assert rec == [0.0]
    assert st_.t == 0.0


def test_discrete_cone_exact():
    g = _grid(0.1, 9.0)
    prof = _profile(M=2)
    M0 = prof.M0
    worst = []

    def hook(state, grid):
        nz = np.any(state.cur != 0, axis=0)
        worst.append(np.max(grid.radius[nz]) - (M0 + state.step * grid.h))

    cfg = solver.SolverConfig(T_final=5.0, sample_every=10 ** 9)
    solver.run(g, preset("wavemap"), prof, cfg, step_hooks=[hook])
    assert max(worst) <= 1e-9


def test_linear_reversal():
    g = _grid(0.1, 6.0)
    tensor = preset("linear")
    prof = _profile()
    cfg = solver.SolverConfig(T_final=2.0, sample_every=10 ** 9)
    nsteps, dt = cfg.time_grid(g.h)
    u0 = sample_data(prof, g, tensor, dt).cur.copy()
    _, st_ = solver.run(g, tensor, prof, cfg)
    st_.nxt = None
    solver.reverse(st_)
    for _ in range(nsteps - 1):
        solver.step(st_, tensor, g, cfg)
    assert np.max(np.abs(st_.cur - u0)) <= 1e-12 * np.max(np.abs(u0))


def test_small_data_scaling():
    g = _grid(0.1, 6.0)
    dev = []
    for eps in (0.2, 0.1):
        a = _run_to(g, preset("wavemap"), _profile(eps, M=2), 2.0).cur
        b = _run_to(g, preset("wavemap"), _profile(eps / 2, M=2), 2.0).cur
        dev.append(np.max(np.abs(a - 2 * b)) / np.max(np.abs(a)))
    assert dev[0] > 0
    # the nonlinear deviation is O(eps^2) relative, so it drops about 4x
    assert dev[0] / dev[1] == pytest.approx(4.0, rel=0.1)


def test_energy_drift_second_order():
    from nullwave.diagnostics import energy
    # broad data; the drift is the O(h^2) gap between measured and conserved energy
    prof = DataProfile([[Bump((4.5, 0.0), 3.5)]], [[]], 0.1, 8.0)
    drift = []
    for h in (0.1, 0.05):
        g = _grid(h, 11.5)
        cfg = solver.SolverConfig(T_final=3.0, sample_every=5)
        rec, _ = solver.run(g, preset("linear"), prof, cfg, lambda s, gr: energy(s, gr))
        E = np.array(rec)
        drift.append(np.max(np.abs(E / E[0] - 1)))
    assert drift[0] / drift[1] >= 3.0
    assert drift[1] <= 1e-3


def test_nan_aborts_with_location():
    g = _grid()
    cfg = solver.SolverConfig(T_final=1.0)
    st_ = sample_data(_profile(), g, preset("cubic"), cfg.time_grid(g.h)[1])
    i, j = g.index_of(1.8, 0.0)
    st_.cur[0, i, j] = np.nan
    with pytest.raises(FloatingPointError, match=r"component 1 at node \(1\.[6-9]"):
        solver.advance(st_, preset("cubic"), g, cfg)


def test_blow_up_becomes_numerical_abort():
    g = _grid(0.1, 6.0)
    prof = _profile(eps=40.0, M=2)
    cfg = solver.SolverConfig(T_final=2.0, sample_every=1)
    with pytest.raises(solver.NumericalAbort) as info:
        solver.run(g, preset("nonnull"), prof, cfg, lambda s, gr: s.t)
    assert info.value.series


def test_sponge_profile_and_run():
    g = _grid(0.1, 4.0)
    damp = solver.sponge_damping(g, 0.04)
    assert np.all(damp[g.radius <= 0.9 * g.R_out] == 1.0)
    edge = np.isclose(g.radius, g.R_out)
    assert np.allclose(damp[edge], 1 - solver.SPONGE_SIGMA_MAX * 0.04)
    cfg = solver.SolverConfig(T_final=6.0, truncation="sponge", sample_every=10 ** 9)
    with pytest.raises(ValueError, match="R_out"):
        solver.run(g, preset("linear"), _profile(), solver.SolverConfig(T_final=6.0))
    _, st_ = solver.run(g, preset("linear"), _profile(), cfg)
    assert np.all(np.isfinite(st_.cur))


def test_config_validation():
    assert solver.SolverConfig().validate() == []
    errs = solver.SolverConfig(cfl=0.9, T_final=-1, truncation="pml", sample_every=0).validate()
    assert len(errs) == 4 and "0.5" in errs[0]
    n, dt = solver.SolverConfig(cfl=0.45, T_final=1.0).time_grid(0.1)
    assert n * dt == pytest.approx(1.0) and dt <= 0.045


def test_deterministic_repeat():
    g = _grid()
    a = _run_to(g, preset("mixed"), _profile(M=2), 1.5).cur
    b = _run_to(g, preset("mixed"), _profile(M=2), 1.5).cur
    assert np.array_equal(a, b)
