import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from nullwave import diagnostics as dg
from nullwave import fields, solver
from nullwave.geometry import ObstacleShape, build_grid
from nullwave.initdata import Bump, DataProfile, sample_data
from nullwave.nullforms import preset

DISK = ObstacleShape("disk", 0.4)


def _static_state(f, dt=0.01, t=0.0):
    f = f[None] if f.ndim == 2 else f
    return fields.FieldState(f.shape[0], t, dt, f.copy(), f.copy(), np.zeros_like(f), nxt=f.copy())


def test_weight_examples():
    assert dg.weight_W(dg.WeightSpec(0, 0), 3.0, 7.0) == 1.0
    assert dg.weight_W(dg.WeightSpec(1, 1), 3.0, 3.0) == pytest.approx(math.sqrt(37))
    assert dg.weight_W(dg.WeightSpec(1, 1), 0.0, 2.0) == pytest.approx(5.0)


@given(mu=st.floats(-2, 2), nu=st.floats(-2, 2), t=st.floats(0, 50), r=st.floats(0, 50))
def test_weight_W00_and_sign(mu, nu, t, r):
    assert dg.weight_W(dg.WeightSpec(0, 0), t, r) == 1.0
    assert dg.weight_W(dg.WeightSpec(mu, nu), t, r) > 0


@given(s=st.floats(0, 20), d=st.floats(0, 10))
def test_weight_even_in_t_minus_r(s, d):
    # fixed t + r = s + 2d and t - r = +-d, with <r> >= <t - r> in both cases
    spec = dg.WeightSpec(0.7, 1.0)
    t1, r1 = s / 2 + d, s / 2
    t2, r2 = s / 2, s / 2 + d
    if min(r1, r2) >= d:
        assert dg.weight_W(spec, t1, r1) == pytest.approx(dg.weight_W(spec, t2, r2), rel=1e-12)


def test_energy_zero(disk_grid):
    assert dg.energy(_static_state(np.zeros((disk_grid.n,) * 2)), disk_grid) == 0.0


def test_energy_quadrature_second_order():
    def cutoff(x1, x2):
        return np.exp(-((x1 - 2.5) ** 2 + x2 ** 2) / 0.3)

    def analytic_density(x1, x2):
        c = cutoff(x1, x2)
        u1 = np.cos(x1) * c + np.sin(x1) * c * (-2 * (x1 - 2.5) / 0.3)
        u2 = np.sin(x1) * c * (-2 * x2 / 0.3)
        return u1 ** 2 + u2 ** 2

    xs = np.linspace(0.0, 5.0, 5001)
    ys = np.linspace(-2.5, 2.5, 5001)
    X1, X2 = np.meshgrid(xs, ys, indexing="ij")
    exact = trapezoid(trapezoid(analytic_density(X1, X2), dx=xs[1] - xs[0], axis=1), dx=xs[1] - xs[0])
    errs = []
    for h in (0.1, 0.05):
        g = build_grid(DISK, h, 5.0)
        f = np.sin(g.X1) * cutoff(g.X1, g.X2) * g.active
        errs.append(abs(dg.energy(_static_state(f), g) - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] < 1e-2 * exact


def test_ghost_zero_and_plane_wave(disk_grid):
    g = disk_grid
    zero = _static_state(np.zeros((g.n, g.n)))
    assert dg.ghost_increment(zero, g, (0, 0, 0, 0)) == 0.0
    t, dt = 1.0, 0.01
    lv = [np.sin(t + k * dt - g.X1)[None] for k in (-1, 0, 1)]
    st_ = fields.FieldState(1, t, dt, lv[0], lv[1], np.zeros_like(lv[1]), nxt=lv[2])
    z = fields.z_fields(st_, g, 1)
    g1, g2 = dg.good_parts(z, (0, 0, 0, 0), g)
    ray = g.active & (np.abs(g.X2) < 1e-12) & (g.X1 > 0.6) & (g.X1 < 2.8)
    assert np.max(np.abs(g1[0, ray])) < 1e-3
    assert np.max(np.abs(g2[0, ray])) < 1e-12


def test_sups_zero(disk_grid):
    s = dg.weighted_sups(_static_state(np.zeros((disk_grid.n,) * 2)), disk_grid)
    assert tuple(s) == (0.0, 0.0, 0.0)


def test_S_u_single_bump_at_t0():
    eps, A, c, r = 0.1, 2.0, 3.0, 1.0
    g = build_grid(DISK, 0.025, 5.0)
    f = eps * Bump((c, 0.0), r, A)(g.X1, g.X2)
    st_ = _static_state(f)
    z = {a: np.zeros_like(st_.cur) for a in fields.multi_indices(1)}
    z[(0, 0, 0, 0)] = st_.cur
    S_u = dg.weighted_sups(st_, g, 1, z).S_u
    # oracle: the weighted bump peaks on the x1 axis just outside the centre
    line = minimize_scalar(lambda x: -(1 + x * x) ** ((0.5 - dg.EPS2) / 2)
                           * eps * float(Bump((c, 0.0), r, A)(np.array(x), np.array(0.0))),
                           bounds=(c - r / 2, c + r / 2), method="bounded",
                           options={"xatol": 1e-12})
    assert S_u == pytest.approx(-line.fun, rel=1e-3)
    assert S_u >= eps * A * (1 + c * c) ** ((0.5 - dg.EPS2) / 2)


def test_sup_reductions_monotone_in_region(disk_grid):
    g = disk_grid
    f = np.sin(2 * g.X1) * np.exp(-((g.X1 - 1.5) ** 2 + g.X2 ** 2)) * g.active
    st_ = _static_state(f)
    z = fields.z_fields(st_, g, 2)
    prev_s, prev_l = None, -1.0
    for R in (1.5, 2.0, 2.5, 3.0):
        s = dg.weighted_sups(st_, g, 2, z, region=g.region(R).astype(float))
        le = dg.local_energy(st_, g, R, 2, z)
        if prev_s is not None:
            assert all(a >= b for a, b in zip(s, prev_s))
        assert le >= prev_l
        prev_s, prev_l = tuple(s), le


def test_fit_decay_examples():
    t = np.linspace(1, 100, 50)
    e, se = dg.fit_decay(list(zip(t, 3.0 / t)), (1, 100))
    assert e == pytest.approx(-1.0, abs=1e-12) and se <= 1e-12
    e, _ = dg.fit_decay(list(zip(t, np.full_like(t, 2.5))), (1, 100))
    assert e == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("p", [-2.0, -1.0, -0.5, 0.0])
def test_fit_decay_planted_exponents(p, rng):
    t = np.linspace(10, 100, 91)
    v = 5.0 * t ** p * (1 + 0.01 * rng.normal(size=t.size))
    e, _ = dg.fit_decay(list(zip(t, v)), (10, 100))
    assert e == pytest.approx(p, abs=0.03)


def test_fit_decay_errors():
    t = np.arange(1.0, 20.0)
    with pytest.raises(ValueError, match="at least 8"):
        dg.fit_decay(list(zip(t, 1 / t)), (1, 5))
    with pytest.raises(ValueError, match="nonnegative"):
        dg.fit_decay(list(zip(t, -1 / t)), (1, 20))
    v = np.where(t < 12, 1e-20, 1.0)
    with pytest.raises(ValueError, match="floor"):
        dg.fit_decay(list(zip(t, v)), (1, 20))


def test_ratios_zero(disk_grid):
    z = np.zeros((disk_grid.n, disk_grid.n))
    assert dg.hardy_ratio(z, disk_grid, 1.0) == 0.0
    assert dg.sobolev_ratio(z, disk_grid) == 0.0
    assert dg.elliptic_ratio(z, disk_grid) == 0.0
    with pytest.raises(dg.InconsistentRatio):
        dg._ratio(1.0, 0.0, "test")


def test_hardy_support_check(disk_grid):
    f = Bump((2.0, 0.0), 0.8)(disk_grid.X1, disk_grid.X2)
    with pytest.raises(ValueError, match="supported"):
        dg.hardy_ratio(f, disk_grid, 0.0, M0=1.5)


def test_hardy_refinement_stable():
    t = 4.0
    vals = []
    for h in (0.05, 0.025):
        g = build_grid(DISK, h, 6.0)
        f = Bump((t / 2, 0.0), 1.0)(g.X1, g.X2)
        vals.append(dg.hardy_ratio(f, g, t, M0=3.0))
    assert vals[1] == pytest.approx(vals[0], rel=0.1)


def _sector(g, d, width=1.0, angle=1.0):
    """Bump in (|x| - d, arg x): fixed radial width and fixed angular opening."""
    s = ((g.radius - d) / width) ** 2 + (np.arctan2(g.X2, g.X1) / angle) ** 2
    out = np.zeros_like(s)
    m = s < 1
    out[m] = np.exp(1 - 1 / (1 - s[m]))
    return out


def test_sobolev_translation_stable_for_angular_sector():
    g = build_grid(DISK, 0.05, 8.5)
    near = dg.sobolev_ratio(_sector(g, 2.0), g)
    far = dg.sobolev_ratio(_sector(g, 7.0), g)
    assert far == pytest.approx(near, rel=0.15)


@pytest.mark.xfail(strict=True, reason="a fixed-size bump has ||Omega^2 f|| growing like |x|^2, "
                   "so the ratio falls with distance; see the sector test for the stable case")
def test_sobolev_translation_stable_for_fixed_bump():
    g = build_grid(DISK, 0.05, 8.5)
    near = dg.sobolev_ratio(Bump((2.0, 0.0), 1.0)(g.X1, g.X2), g)
    far = dg.sobolev_ratio(Bump((7.0, 0.0), 1.0)(g.X1, g.X2), g)
    assert far == pytest.approx(near, rel=0.15)


def test_elliptic_free_space_bound():
    for h in (0.05, 0.025):
        g = build_grid(DISK, h, 5.0)
        w = Bump((2.5, 0.0), 1.5)(g.X1, g.X2)
        assert dg.elliptic_ratio(w, g) <= 1 + 5 * h * h


def test_measured_support(disk_grid):
    g = disk_grid
    f = np.zeros((g.n, g.n))
    assert dg.measured_support(f, g) == 0.0
    i, j = g.index_of(1.0, 1.0)
    f[i, j] = 1e-300
    assert dg.measured_support(f, g) == pytest.approx(math.sqrt(2))


def _linear_series(eps, T=6.0):
    g = build_grid(DISK, 0.1, T + 3.0 + 0.5)
    prof = DataProfile([[Bump((1.8, 0.0), 1.1)]], [[]], eps, 3.0)
    mon = dg.Monitor(g, z_max=2, radii=(2.0,), M0=3.0)
    solver.run(g, preset("linear"), prof, solver.SolverConfig(cfl=0.4, T_final=T, sample_every=5), mon)
    return mon.series


def test_linearity_control_and_ghost_monotone():
    s1, s2 = _linear_series(0.05), _linear_series(0.1)
    assert np.allclose(s2.column("energy"), 4 * s1.column("energy"), rtol=1e-12)
    for name in ("local_energy_R2", "ghost_cum"):
        assert np.allclose(s2.column(name), 4 * s1.column(name), rtol=1e-12)
    assert np.allclose(s2.column("S_u"), 2 * s1.column("S_u"), rtol=1e-12)
    e1, se1 = dg.fit_decay(s1.pairs("local_energy_R2"), (2.0, 6.0))
    e2, _ = dg.fit_decay(s2.pairs("local_energy_R2"), (2.0, 6.0))
    assert abs(e1 - e2) <= se1
    g = s2.column("ghost_cum")
    assert np.all(np.diff(g) >= 0)
    for name in ("hardy", "sobolev", "elliptic"):
        col = s2.column(name)
        assert np.all(np.isfinite(col)) and np.all(col >= 0)


def test_series_csv_round_trip(tmp_path):
    s = _linear_series(0.1, T=1.0)
    path = tmp_path / "series.csv"
    path.write_text(s.to_csv())
    header = path.read_text().splitlines()[0].split(",")
    assert header[:11] == ["t", "energy", "local_energy_R2", "ghost_cum", "S_grad", "S_good", "S_u",
                           "support_radius", "hardy", "sobolev", "elliptic"]
    back = dg.read_series_csv(path)
    for name in header:
        assert np.array_equal(back[name], s.column(name))
