"""Executable acceptance checks, shared by the test-suite and ``nullwave verify``.

Each ``criterion_k`` returns a :class:`CheckResult`.  ``quick=True`` shrinks
the expensive experiments so that ``verify`` finishes in a minute or two;
the test-suite always uses the full scales.
"""

from __future__ import annotations

import functools
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from nullwave import diagnostics, fields, nullforms, solver
from nullwave.geometry import ObstacleShape, build_grid
from nullwave.initdata import (Bump, DataError, DataProfile, check_compatibility,
                               sample_data)


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.criterion}: {self.name} -- {self.detail}"


# ---------------------------------------------------------------------------
# 1. null algebra


def criterion_1(quick=False, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_qab = 0.0
    for _ in range(1000):
        d = rng.normal(size=3)
        for a in range(3):
            for b in range(3):
                worst_qab = max(worst_qab, abs(nullforms.eval_qab(a, b, d, d)))
    # plane waves F(t - xi.x) along exactly representable unit directions
    worst_pw = 0.0
    for xi in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)):
        for _ in range(250):
            fp, gp = rng.normal(size=2)
            df = np.array([fp, -fp * xi[0], -fp * xi[1]])
            dg = np.array([gp, -gp * xi[0], -gp * xi[1]])
            worst_pw = max(worst_pw, abs(nullforms.eval_q0(df, dg)))
    # discretely differentiated sin(t - x1)
    h = 0.02
    grid = build_grid(ObstacleShape("disk", 0.3), h, 3.0)
    dt = 0.45 * h
    t = 0.7
    act = grid.active

    def level(s):
        f = np.sin(s - grid.X1)
        f[~act] = 0.0
        return f[None]

    st = fields.FieldState(1, t, dt, level(t - dt), level(t), level(t), level(t + dt))
    ft, _ = fields.time_derivative(st)
    d1, d2 = fields.spatial_derivs(st.cur, grid, dirichlet=False)
    q0 = nullforms.eval_q0((ft, d1, d2), (ft, d1, d2))
    # the outermost active ring borders the zero layer, where sin(t - x1) is cut off
    inner = act & (grid.radius <= grid.R_out - 3 * h)
    worst_disc = float(np.max(np.abs(q0[:, inner])))
    ok = worst_qab == 0.0 and worst_pw == 0.0 and worst_disc <= 5e-4
    return CheckResult(1, "null algebra", ok,
                       f"max|Q_ab(f,f)| = {worst_qab:.1e}, max|Q0(plane wave)| = {worst_pw:.1e}, "
                       f"max|Q0_h(sin(t-x1))| = {worst_disc:.2e} (<= 5e-4)",
                       {"qab": worst_qab, "plane_wave": worst_pw, "discrete": worst_disc})


# ---------------------------------------------------------------------------
# 2. null-condition checker against dense sampling


def dense_symbol_oracle(block, n_angles=720, rtol=1e-9):
    """Null verdict by sampling the light cone densely (independent of the algebraic rule)."""
    th = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    worst = 0.0
    for s in (1.0, -1.0):
        xi = np.stack([np.full_like(th, s), np.cos(th), np.sin(th)])
        vals = np.einsum("an,ab,bn->n", xi, block, xi)
        worst = max(worst, float(np.max(np.abs(vals))))
    scale = max(1.0, float(np.max(np.abs(block))))
    return worst <= rtol * scale


def random_tensor(rng, M=None):
    """Random tensor: null by construction, generic, or a slight perturbation of a null one."""
    M = M or int(rng.integers(1, 3))
    kind = rng.integers(0, 3)
    q = np.zeros((M, M, M, M, 3, 3))
    for ix in np.ndindex(M, M, M, M):
        if rng.random() < 0.5:
            continue
        if kind == 1:
            q[ix] = rng.normal(size=(3, 3))
            continue
        c0 = rng.normal()
        blk = np.diag([c0, -c0, -c0])
        for a, b in nullforms.PAIRS:
            c = rng.normal()
            blk[a, b] += c
            blk[b, a] -= c
        if kind == 2:
            i, j = rng.integers(0, 3, size=2)
            blk[i, j] += rng.choice([-1, 1]) * 10.0 ** rng.uniform(-6, -2)
        q[ix] = blk
    return nullforms.CoefficientTensor(q)


def criterion_2(quick=False, seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    disagreements = 0
    n_null = 0
    for _ in range(1000):
        tens = random_tensor(rng)
        alg = nullforms.check_null(tens).passed
        oracle = all(dense_symbol_oracle(tens.q[ix]) for ix in tens.blocks())
        disagreements += alg != oracle
        n_null += alg
    q0_ok = nullforms.check_null(nullforms.preset("cubic")).passed
    q = np.zeros((1, 1, 1, 1, 3, 3))
    q[0, 0, 0, 0, 0, 0] = 1.0
    q00_fails = not nullforms.check_null(nullforms.CoefficientTensor(q)).passed
    ok = disagreements == 0 and q0_ok and q00_fails
    return CheckResult(2, "null-condition checker", ok,
                       f"{disagreements} disagreements on 1000 tensors ({n_null} null), "
                       f"Q0 preset passes: {q0_ok}, q00-only fails: {q00_fails}",
                       {"disagreements": disagreements})


# ---------------------------------------------------------------------------
# 3. manufactured solution


def mms_error(h, T=1.0, tensor_name="cubic", cfl=0.4):
    """L2 error at T of u* = sin(2t) b(x), b a bump wide enough to be resolved at h = 0.1.

    cfl = 0.4 keeps dt/h identical on every grid of the refinement study.
    """
    tensor = nullforms.preset(tensor_name)
    M0 = 5.5
    grid = build_grid(ObstacleShape("disk", 0.4), h, T + M0 + 3 * h)
    comps = [solver.MMSComponent(Bump((3.0, 0.0), 2.5, 1.0), omega=2.0) for _ in range(tensor.M)]
    forcing = solver.mms_forcing(comps, tensor, grid)
    cfg = solver.SolverConfig(cfl=cfl, T_final=T, sample_every=10 ** 9)
    _, state = solver.run(grid, tensor, forcing.initial_profile(M0), cfg, forcing=forcing)
    err = state.cur - forcing.exact(state.t)
    return math.sqrt(float(np.sum(err[:, grid.active] ** 2)) * h * h)


def criterion_3(quick=False) -> CheckResult:
    hs = (0.1, 0.05, 0.025)
    errs = [mms_error(h) for h in hs]
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    pair = [math.log2(errs[k] / errs[k + 1]) for k in range(2)]
    ok = abs(order - 2.0) <= 0.2
    return CheckResult(3, "MMS convergence", ok,
                       f"L2 errors {', '.join(f'{e:.3e}' for e in errs)}; fitted order {order:.3f} "
                       f"(pairwise {pair[0]:.3f}, {pair[1]:.3f}); target 2.0 +- 0.2",
                       {"errors": errs, "order": order})


# ---------------------------------------------------------------------------
# 4. conservation and reversibility


def criterion_4(quick=False) -> CheckResult:
    h = 0.05
    T = 8.0 if quick else 50.0
    M0 = 8.0
    tensor = nullforms.preset("linear")
    grid = build_grid(ObstacleShape("disk", 0.3), h, T + M0 + 2 * h)
    prof = DataProfile([[Bump((4.5, 0.0), 3.5)]], [[]], epsilon=0.1, M0=M0)
    cfg = solver.SolverConfig(T_final=T, sample_every=50)

    def hook(state, g):
        sub, sl = g.crop(state.support_radius + 3 * h)
        st = fields.FieldState(1, state.t, state.dt, state.prev[:, sl, sl], state.cur[:, sl, sl],
                               state.ut[:, sl, sl], state.nxt[:, sl, sl])
        return state.t, diagnostics.energy(st, sub)

    u0 = sample_data(prof, grid, tensor, cfg.time_grid(h)[1]).cur.copy()
    rec, state = solver.run(grid, tensor, prof, cfg, hook)
    E = np.array([e for _, e in rec])
    drift = float(np.max(np.abs(E / E[0] - 1.0)))
    # integrate back to t = 0
    nsteps = cfg.time_grid(h)[0]
    state.nxt = None
    solver.reverse(state)
    for _ in range(nsteps - 1):
        solver.step(state, tensor, grid, cfg)
    rev = float(np.max(np.abs(state.cur - u0)) / np.max(np.abs(u0)))
    ok = drift <= 1e-3 and rev <= 1e-10
    return CheckResult(4, "conservation and reversibility", ok,
                       f"T = {T:g}: max relative energy drift {drift:.3e} (<= 1e-3), "
                       f"relative reversal error {rev:.3e} (<= 1e-10)",
                       {"drift": drift, "reversal": rev})


# ---------------------------------------------------------------------------
# 5. finite speed of propagation


def _cone_run(h, T=5.0):
    M0 = 3.0
    tensor = nullforms.preset("wavemap")
    grid = build_grid(ObstacleShape("disk", 0.4), h, T + M0 + 2 * h)
    prof = DataProfile([[Bump((1.8, 0.0), 1.1)], [Bump((-1.2, 1.2), 1.0)]], [[], []], 0.1, M0)
    cfg = solver.SolverConfig(T_final=T, sample_every=10 ** 9)
    r = grid.radius
    worst = {"cone_violation": 0.0, "leak": 0.0}

    def check(state, g):
        nz = np.any(state.cur != 0, axis=0)
        if nz.any():
            worst["cone_violation"] = max(worst["cone_violation"],
                                          float(np.max(r[nz])) - (M0 + state.step * h))
        out = r > state.t + M0 + 5 * h
        worst["leak"] = max(worst["leak"], float(np.max(np.abs(state.cur[:, out]), initial=0.0)))

    solver.run(grid, tensor, prof, cfg, step_hooks=[check])
    return worst


def criterion_5(quick=False) -> CheckResult:
    coarse = _cone_run(0.1)
    fine = _cone_run(0.05)
    cone_ok = coarse["cone_violation"] <= 1e-9 and fine["cone_violation"] <= 1e-9
    lc, lf = coarse["leak"], fine["leak"]
    shrink_ok = lf * 3.0 <= lc if lc > 0 else lf == 0.0
    ratio = lc / lf if lf > 0 else math.inf
    return CheckResult(5, "finite speed", cone_ok and shrink_ok,
                       f"support beyond the discrete cone: {max(coarse['cone_violation'], fine['cone_violation']):.2e} "
                       f"(<= 0); leak outside t+M0+5h: {lc:.3e} (h=0.1) -> {lf:.3e} (h=0.05), "
                       f"shrink factor {ratio:.3g} (>= 3)",
                       {"leak_coarse": lc, "leak_fine": lf, **{f"coarse_{k}": v for k, v in coarse.items()}})


# ---------------------------------------------------------------------------
# 6-8. long small-amplitude wave-map run


DECAY_WINDOW = (20.0, 100.0)


@functools.lru_cache(maxsize=2)
def decay_run(T=100.0, h=0.1, epsilon=0.1):
    """Wave-map run with cfl 0.4 so that samples fall on integer times."""
    M0 = 3.0
    tensor = nullforms.preset("wavemap")
    # the dispersive precursor ahead of the front spreads like (h^2 T)^(1/3); keep it off the outer layer
    margin = max(1.0, 3.0 * (h * h * T) ** (1.0 / 3.0))
    grid = build_grid(ObstacleShape("disk", 0.4), h, T + M0 + margin)
    prof = DataProfile([[Bump((1.8, 0.0), 1.1)], [Bump((-1.2, 1.2), 1.0)]], [[], []], epsilon, M0)
    cfl = 0.4
    per_unit = int(round(1.0 / (cfl * h)))
    cfg = solver.SolverConfig(cfl=cfl, T_final=T, sample_every=per_unit)
    mon = diagnostics.Monitor(grid, z_max=2, radii=(2.0,), M0=M0, ratios=False)
    solver.run(grid, tensor, prof, cfg, mon)
    return mon.series


def _window_for(T):
    return (DECAY_WINDOW[0] * T / 100.0, T)


def criterion_6(quick=False) -> CheckResult:
    T = 30.0 if quick else 100.0
    s = decay_run(T)
    win = _window_for(T)
    t = s.column("t")
    e_inf, se_inf = diagnostics.fit_decay(list(zip(t, s.column("u_linf_R2"))), win)
    e_loc, se_loc = diagnostics.fit_decay(list(zip(t, np.sqrt(s.column("local_energy_R2")))), win)
    ok = abs(e_inf + 1) <= 0.2 and abs(e_loc + 1) <= 0.2
    return CheckResult(6, "local decay rate", ok,
                       f"window [{win[0]:g}, {win[1]:g}]: exponent of ||u||_Linf(K_2) = {e_inf:.3f} +- {se_inf:.3f}, "
                       f"of sqrt(local energy) = {e_loc:.3f} +- {se_loc:.3f}; target -1 +- 0.2",
                       {"linf": e_inf, "local_energy_norm": e_loc})


def _at(s, name, t0):
    t = s.column("t")
    k = int(np.argmin(np.abs(t - t0)))
    return float(s.column(name)[k]), float(t[k])


def criterion_7(quick=False) -> CheckResult:
    T = 30.0 if quick else 100.0
    s = decay_run(T)
    t = s.column("t")
    sel = (t >= 1.0 - 1e-9) & (t <= T + 1e-9)
    out = {}
    ok = True
    parts = []
    for name in ("S_grad", "S_u"):
        ref, tref = _at(s, name, 1.0)
        mx = float(np.max(s.column(name)[sel]))
        out[name] = mx / ref
        ok &= mx <= 3 * ref
        parts.append(f"max {name} / {name}(t={tref:g}) = {mx / ref:.3f}")
    return CheckResult(7, "weighted boundedness", ok, "; ".join(parts) + " (<= 3)", out)


def criterion_8(quick=False) -> CheckResult:
    T = 30.0 if quick else 100.0
    s = decay_run(T)
    g = s.column("ghost_cum")
    mono = bool(np.all(np.diff(g) >= 0))
    gh, _ = _at(s, "ghost_cum", T / 2)
    gT, _ = _at(s, "ghost_cum", T)
    inc = (gT - gh) / gh if gh > 0 else math.inf
    ok = mono and inc <= 0.2
    return CheckResult(8, "ghost-weight saturation", ok,
                       f"nondecreasing: {mono}; (G({T:g}) - G({T / 2:g})) / G({T / 2:g}) = {inc:.4f} (<= 0.2)",
                       {"relative_increment": inc})


# ---------------------------------------------------------------------------
# 9. inequality monitors


RATIO_SHAPE = ObstacleShape("star", 0.3, ((0.0, 0.0), (0.1, 0.0)))


def random_admissible_field(rng, shape=RATIO_SHAPE, reach=5.0):
    """Callable f(X1, X2) vanishing on the obstacle boundary and supported in |x| <= reach."""
    rho_max = shape.r0 * 1.2
    if rng.random() < 0.5:
        bumps = []
        for _ in range(int(rng.integers(1, 4))):
            rc = rng.uniform(rho_max + 0.5, 3.5)
            ang = rng.uniform(0, 2 * np.pi)
            rad = rng.uniform(0.3, min(1.2, rc - rho_max - 0.1, reach - rc))
            bumps.append(Bump((rc * math.cos(ang), rc * math.sin(ang)), rad, rng.normal()))

        def f(X1, X2):
            return sum(b(X1, X2) for b in bumps)
    else:
        c = rng.uniform(-0.2, 0.2, size=2)
        rad = rng.uniform(1.5, 3.0)
        amp = rng.normal()
        b = Bump((c[0], c[1]), rad, amp)

        def f(X1, X2):
            r = np.hypot(X1, X2)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = (1.0 - shape.rho(np.arctan2(X2, X1)) / r) * b(X1, X2)
            return np.where(shape.inside(X1, X2), 0.0, out)
    return f


def ratio_maxima(h, n_fields=100, seed=7, t=2.0, M0=3.0):
    grid = build_grid(RATIO_SHAPE, h, t + M0 + 0.5)
    rng = np.random.default_rng(seed)
    out = {"hardy": [], "sobolev": [], "elliptic": []}
    for _ in range(n_fields):
        f = random_admissible_field(rng, reach=t + M0)(grid.X1, grid.X2)
        f[~grid.active] = 0.0
        out["hardy"].append(diagnostics.hardy_ratio(f, grid, t, M0))
        out["sobolev"].append(diagnostics.sobolev_ratio(f, grid))
        out["elliptic"].append(diagnostics.elliptic_ratio(f, grid))
    return {k: np.array(v) for k, v in out.items()}


def criterion_9(quick=False) -> CheckResult:
    n = 20 if quick else 100
    coarse = ratio_maxima(0.05, n)
    fine = ratio_maxima(0.025, n)
    ok = True
    parts = []
    vals = {}
    for k in ("hardy", "sobolev", "elliptic"):
        finite = bool(np.all(np.isfinite(coarse[k])) and np.all(np.isfinite(fine[k])))
        mc, mf = float(coarse[k].max()), float(fine[k].max())
        change = abs(mf - mc) / mc
        ok &= finite and change <= 0.1
        vals[k] = (mc, mf, change)
        parts.append(f"{k} max {mc:.4f} -> {mf:.4f} ({100 * change:.2f}%)")
    return CheckResult(9, "inequality monitors", ok, "; ".join(parts) + " (<= 10%)", vals)


# ---------------------------------------------------------------------------
# 10. compatibility


def criterion_10(quick=False) -> CheckResult:
    grid = build_grid(ObstacleShape("disk", 0.3), 0.05, 3.0)
    tensor = nullforms.preset("cubic")
    ann = DataProfile([[Bump((1.5, 0.0), 0.6)]], [[Bump((0.0, -1.4), 0.5)]], 0.5, 2.5)
    rep_ok = check_compatibility(ann, grid, tensor, order=4, tol=1e-12)
    bad = DataProfile([[Bump((0.6, 0.0), 0.5)]], [[]], 0.5, 2.5)
    rep_bad = check_compatibility(bad, grid, tensor, order=4, tol=1e-12)
    try:
        sample_data(bad, grid, tensor, 0.02)
        rejected = False
    except DataError:
        rejected = True
    ok = rep_ok.passed and rep_ok.residual <= 1e-12 and not rep_bad.passed and rep_bad.residual > 0 and rejected
    return CheckResult(10, "compatibility", ok,
                       f"annulus data residual {rep_ok.residual:.1e} (<= 1e-12); overlapping data "
                       f"residual {rep_bad.residual:.3e}, rejected by sampler: {rejected}",
                       {"annulus": rep_ok.residual, "overlap": rep_bad.residual})


# ---------------------------------------------------------------------------
# 11. determinism


DETERMINISM_CONFIG = """
[obstacle]
kind = "star"
r0 = 0.3
fourier_coeffs = [[0.0, 0.0], [0.1, 0.0]]

[grid]
h = 0.05

[time]
T_final = 3.0
sample_every = 10

[coefficients]
preset = "mixed"

[data]
epsilon = 0.3
M0 = 3.0
u0 = [[{center = [1.8, 0.0], radius = 1.1}], [{center = [-1.0, 1.2], radius = 0.9}]]
u1 = [[], [{center = [0.0, -1.6], radius = 0.8, amplitude = 0.5}]]
"""


def criterion_11(quick=False) -> CheckResult:
    from nullwave.cli import cmd_run, parse_config

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "run.toml")
        with open(path, "w") as fh:
            fh.write(DETERMINISM_CONFIG)
        cfg = parse_config(path)
        blobs = []
        codes = []
        for k in range(2):
            out = os.path.join(tmp, f"out{k}")
            codes.append(cmd_run(cfg, out, log=lambda *a: None))
            with open(os.path.join(out, "series.csv"), "rb") as fh:
                blobs.append(fh.read())
    same = blobs[0] == blobs[1]
    ok = same and codes == [0, 0]
    return CheckResult(11, "determinism", ok,
                       f"exit codes {codes}; series.csv bit-identical: {same} ({len(blobs[0])} bytes)",
                       {"identical": same})


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11)


def run_all(full=False, log=None):
    results = []
    for fn in CRITERIA:
        res = fn(quick=not full)
        if log is not None:
            log(res.line())
        results.append(res)
    return results
