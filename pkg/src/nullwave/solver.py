"""Explicit leapfrog integration of the semilinear exterior problem.

The update at every evolved node is

    u^{n+1} = 2 u^n - u^{n-1} + dt^2 (Lap_h u^n + F^n + g^n)

with Shortley-Weller arms next to the obstacle.  The nonlinearity needs
``d_t u^n`` before ``u^{n+1}`` exists, so it uses
``2 (u^n - u^{n-1}) / dt - v^{n-1}`` where ``v^{n-1}`` is the centered
derivative from the previous step; that combination is the second-order
backward difference.  Nodes outside the discrete domain of influence are
never touched, so they stay exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from nullwave import fields
from nullwave.geometry import BOUNDARY, DIRECTIONS, INTERIOR, OPPOSITE, ExteriorGrid
from nullwave.initdata import Bump, DataProfile, sample_data
from nullwave.nullforms import CoefficientTensor, cubic_term

CFL_CAP = 0.5
SPONGE_SIGMA_MAX = 5.0


class NumericalAbort(RuntimeError):
    """Raised when the solution stops being finite; carries the partial series."""

    def __init__(self, message, series=None):
        super().__init__(message)
        self.series = series


@dataclass
class SolverConfig:
    cfl: float = 0.45
    T_final: float = 1.0
    truncation: str = "exact_cone"
    forcing: Optional["MMSForcing"] = None
    sample_every: int = 20

    def validate(self):
        errors = []
        if not (0 < self.cfl <= CFL_CAP):
            errors.append(f"cfl = {self.cfl} must lie in (0, {CFL_CAP}]")
        if not self.T_final >= 0:
            errors.append("T_final must be nonnegative")
        if self.truncation not in ("exact_cone", "sponge"):
            errors.append(f"unknown truncation {self.truncation!r}")
        if int(self.sample_every) < 1:
            errors.append("sample_every must be a positive integer")
        return errors

    def time_grid(self, h):
        """Number of steps and dt <= cfl*h that lands exactly on T_final."""
        if self.T_final == 0:
            return 0, self.cfl * h
        nsteps = int(np.ceil(self.T_final / (self.cfl * h) - 1e-12))
        return nsteps, self.T_final / nsteps


@numba.njit(parallel=True, cache=True)
def _step_kernel(prev, cur, ut, nxt, ut_new, mask, frac, cutarm, slaved, x, h, dt, r_act,
                 eI, eJ, eK, eL, eA, eB, eV, forcing, damp, rowbad):
    M = cur.shape[0]
    n = cur.shape[1]
    c = n // 2
    ne = eV.shape[0]
    has_f = forcing.shape[0] > 0
    has_damp = damp.shape[0] > 0
    span = int(np.ceil(r_act / h)) + 1
    i0 = max(1, c - span)
    i1 = min(n - 2, c + span)
    ih2 = 1.0 / (h * h)
    i2h = 0.5 / h
    dt2 = dt * dt
    r2 = r_act * r_act
    for i in numba.prange(i0, i1 + 1):
        d = np.empty((M, 3))
        lap = np.empty(M)
        F = np.empty(M)
        rem = r2 - x[i] * x[i]
        if rem < 0.0:
            continue
        w = int(np.sqrt(rem) / h) + 1
        j0 = max(1, c - w)
        j1 = min(n - 2, c + w)
        bad = 0
        for j in range(j0, j1 + 1):
            m = mask[i, j]
            if (m != 1 and m != 2) or slaved[i, j]:
                for k in range(M):
                    nxt[k, i, j] = 0.0
                    ut_new[k, i, j] = 0.0
                continue
            if m == 1:
                for k in range(M):
                    f0 = cur[k, i, j]
                    fe = cur[k, i + 1, j]
                    fw = cur[k, i - 1, j]
                    fn = cur[k, i, j + 1]
                    fs = cur[k, i, j - 1]
                    lap[k] = (fe + fw + fn + fs - 4.0 * f0) * ih2
                    d[k, 0] = ut[k, i, j]
                    d[k, 1] = (fe - fw) * i2h
                    d[k, 2] = (fn - fs) * i2h
            else:
                te = frac[0, i, j] if cutarm[0, i, j] else 1.0
                tw = frac[1, i, j] if cutarm[1, i, j] else 1.0
                tn = frac[2, i, j] if cutarm[2, i, j] else 1.0
                ts = frac[3, i, j] if cutarm[3, i, j] else 1.0
                for k in range(M):
                    f0 = cur[k, i, j]
                    fe = 0.0 if cutarm[0, i, j] else cur[k, i + 1, j]
                    fw = 0.0 if cutarm[1, i, j] else cur[k, i - 1, j]
                    fn = 0.0 if cutarm[2, i, j] else cur[k, i, j + 1]
                    fs = 0.0 if cutarm[3, i, j] else cur[k, i, j - 1]
                    lap[k] = 2.0 * ih2 * (fw / (tw * (tw + te)) + fe / (te * (tw + te)) - f0 / (tw * te)
                                          + fs / (ts * (ts + tn)) + fn / (tn * (ts + tn)) - f0 / (ts * tn))
                    d[k, 0] = ut[k, i, j]
                    d[k, 1] = (-te / (tw * (tw + te)) * fw + (te - tw) / (tw * te) * f0
                               + tw / (te * (tw + te)) * fe) / h
                    d[k, 2] = (-tn / (ts * (ts + tn)) * fs + (tn - ts) / (ts * tn) * f0
                               + ts / (tn * (ts + tn)) * fn) / h
            for k in range(M):
                F[k] = 0.0
            for e in range(ne):
                F[eI[e]] += eV[e] * cur[eJ[e], i, j] * d[eK[e], eA[e]] * d[eL[e], eB[e]]
            for k in range(M):
                acc = lap[k] + F[k]
                if has_f:
                    acc += forcing[k, i, j]
                new = 2.0 * cur[k, i, j] - prev[k, i, j] + dt2 * acc
                if has_damp:
                    new *= damp[i, j]
                vc = (new - prev[k, i, j]) / (2.0 * dt)
                nxt[k, i, j] = new
                ut_new[k, i, j] = 2.0 * (new - cur[k, i, j]) / dt - vc
                if not np.isfinite(new):
                    bad = 1
        rowbad[i] = bad


@numba.njit(cache=True)
def _slave_kernel(nxt, ut_new, si, sj, oi, oj, coef):
    M = nxt.shape[0]
    for s in range(si.shape[0]):
        for k in range(M):
            if oi[s] < 0:
                nxt[k, si[s], sj[s]] = 0.0
                ut_new[k, si[s], sj[s]] = 0.0
            else:
                nxt[k, si[s], sj[s]] = coef[s] * nxt[k, oi[s], oj[s]]
                ut_new[k, si[s], sj[s]] = coef[s] * ut_new[k, oi[s], oj[s]]


@dataclass
class _GridKernelData:
    cutarm: np.ndarray
    slaved: np.ndarray
    si: np.ndarray
    sj: np.ndarray
    oi: np.ndarray
    oj: np.ndarray
    coef: np.ndarray
    damp_cache: dict = field(default_factory=dict)


_KERNEL_CACHE: dict = {}


def _kernel_data(grid: ExteriorGrid) -> _GridKernelData:
    key = id(grid)
    hit = _KERNEL_CACHE.get(key)
    if hit is not None and hit[0] is grid:
        return hit[1]
    si, sj = np.nonzero(grid.slave_dir >= 0)
    oi = np.full(si.shape, -1, dtype=np.int64)
    oj = np.full(si.shape, -1, dtype=np.int64)
    for s, (i, j) in enumerate(zip(si, sj)):
        d = grid.slave_dir[i, j]
        if d < 4:
            di, dj = DIRECTIONS[OPPOSITE[d]]
            oi[s], oj[s] = i + di, j + dj
    data = _GridKernelData(grid.cutarm.astype(np.bool_), grid.slave_dir >= 0,
                           si.astype(np.int64), sj.astype(np.int64), oi, oj,
                           grid.slave_coef[si, sj].copy())
    if len(_KERNEL_CACHE) > 8:
        _KERNEL_CACHE.clear()
    _KERNEL_CACHE[key] = (grid, data)
    return data


def sponge_damping(grid: ExteriorGrid, dt: float):
    """Factor ``1 - sigma(r) dt`` with sigma rising quadratically over the outer 10% of R_out."""
    r = grid.radius
    r0 = 0.9 * grid.R_out
    sigma = np.where(r > r0, SPONGE_SIGMA_MAX * ((r - r0) / (0.1 * grid.R_out)) ** 2, 0.0)
    return 1.0 - sigma * dt


def advance(state: fields.FieldState, tensor: CoefficientTensor, grid: ExteriorGrid,
            config: SolverConfig, forcing=None):
    """Compute ``u(t + dt)`` into ``state.nxt`` (and the matching ``d_t`` estimate).

    The level is not committed; call :func:`commit` afterwards.  Raises
    FloatingPointError naming node, time and component on a non-finite value.
    """
    kd = _kernel_data(grid)
    h = grid.h
    dt = state.dt
    if state.nxt is None:
        state.nxt = state.spare if getattr(state, "spare", None) is not None else np.zeros_like(state.cur)
    ut_new = getattr(state, "spare_ut", None)
    if ut_new is None:
        ut_new = np.zeros_like(state.cur)
    r_act = state.support_radius + h
    if forcing is not None:
        r_act = max(r_act, forcing.support_radius)
    r_act = min(r_act, grid.R_out) + 1e-9 * h
    if forcing is not None:
        g = forcing.evaluate(state.t)
    else:
        g = np.zeros((0, 0, 0))
    if config.truncation == "sponge":
        damp = kd.damp_cache.get(dt)
        if damp is None:
            damp = kd.damp_cache.setdefault(dt, sponge_damping(grid, dt))
    else:
        damp = np.zeros((0, 0))
    I, J, K, L, A, B, V = tensor.entries()
    rowbad = np.zeros(grid.n, dtype=np.int8)
    _step_kernel(state.prev, state.cur, state.ut, state.nxt, ut_new, grid.mask, grid.frac,
                 kd.cutarm, kd.slaved, grid.x, h, dt, r_act, I, J, K, L, A, B,
                 np.ascontiguousarray(V), g, damp, rowbad)
    _slave_kernel(state.nxt, ut_new, kd.si, kd.sj, kd.oi, kd.oj, kd.coef)
    state.ut_next = ut_new
    if rowbad.any():
        bad = ~np.isfinite(state.nxt)
        comp, i, j = (int(v[0]) for v in np.nonzero(bad))
        raise FloatingPointError(
            f"non-finite value in component {comp + 1} at node ({grid.x[i]:.6g}, {grid.x[j]:.6g}),"
            f" t = {state.t + dt:.6g}")
    return state


def commit(state: fields.FieldState, grid: ExteriorGrid):
    """Rotate levels after :func:`advance`; recycles the old buffers."""
    if state.nxt is None:
        raise ValueError("nothing to commit: advance() has not been called")
    old_prev, old_ut = state.prev, state.ut
    state.prev, state.cur = state.cur, state.nxt
    state.ut = state.ut_next
    state.nxt = None
    state.ut_next = None
    state.spare = old_prev
    state.spare_ut = old_ut
    state.t += state.dt
    state.step += 1
    state.support_radius += grid.h
    return state


def step(state, tensor, grid, config, forcing=None):
    """One full leapfrog step (advance + commit)."""
    advance(state, tensor, grid, config, forcing)
    return commit(state, grid)


def reverse(state: fields.FieldState):
    """Swap the two levels so that further steps integrate backwards in time."""
    state.prev, state.cur = state.cur, state.prev
    state.ut = -state.ut
    state.nxt = None
    return state


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass
class MMSComponent:
    bump: Bump
    omega: float = 1.0


class MMSForcing:
    """Forcing that makes ``u*^I = sin(omega_I t) b_I(x)`` an exact solution.

    ``g = d_t^2 u* - Lap u* - F(u*, d u*)`` with closed-form bump derivatives.
    """

    def __init__(self, components: list[MMSComponent], tensor: CoefficientTensor,
                 grid: ExteriorGrid):
        if len(components) != tensor.M:
            raise ValueError("one manufactured component per field component is required")
        bx, by = grid.shape.boundary_points(4096)
        for c in components:
            b = c.bump
            if np.min(np.hypot(bx - b.center[0], by - b.center[1])) <= b.radius:
                raise ValueError("manufactured solution support touches the obstacle")
        self.components = components
        self.tensor = tensor
        self.grid = grid
        self.support_radius = max((np.hypot(*c.bump.center) + c.bump.radius for c in components),
                                  default=0.0)
        # restrict evaluation to the bounding box of all bumps
        h = grid.h
        lo = min(min(c.bump.center) - c.bump.radius for c in components) - 2 * h
        hi = max(max(c.bump.center) + c.bump.radius for c in components) + 2 * h
        c0 = grid.n // 2
        self._sl = slice(max(0, c0 + int(np.floor(lo / h))), min(grid.n, c0 + int(np.ceil(hi / h)) + 1))
        xs = grid.x[self._sl]
        X1, X2 = xs[:, None] * np.ones((1, xs.size)), np.ones((xs.size, 1)) * xs[None, :]
        self._parts = [c.bump.derivatives(X1, X2) for c in components]
        self._active = grid.active[self._sl, self._sl]
        self._out = np.zeros((tensor.M, grid.n, grid.n))

    def exact(self, t, X1=None, X2=None):
        grid = self.grid
        X1 = grid.X1 if X1 is None else X1
        X2 = grid.X2 if X2 is None else X2
        return np.stack([np.sin(c.omega * t) * c.bump(X1, X2) for c in self.components])

    def exact_dt(self, t):
        grid = self.grid
        return np.stack([c.omega * np.cos(c.omega * t) * c.bump(grid.X1, grid.X2)
                         for c in self.components])

    def evaluate(self, t):
        u, du, acc = [], [], []
        for c, (b, g1, g2, lap) in zip(self.components, self._parts):
            s, co = np.sin(c.omega * t), np.cos(c.omega * t)
            u.append(s * b)
            du.append(np.stack([c.omega * co * b, s * g1, s * g2]))
            acc.append(-c.omega ** 2 * s * b - s * lap)
        u = np.stack(u)
        g = np.stack(acc)
        if not self.tensor.is_zero():
            g = g - cubic_term(self.tensor, u, np.stack(du))
        g[:, ~self._active] = 0.0
        self._out[:, self._sl, self._sl] = g
        return self._out

    def initial_profile(self, M0) -> DataProfile:
        """Data (u*(0), d_t u*(0)) = (0, omega b) with epsilon = 1."""
        u1 = [[Bump(c.bump.center, c.bump.radius, c.bump.amplitude * c.omega)] for c in self.components]
        return DataProfile([[] for _ in self.components], u1, epsilon=1.0, M0=M0)


def mms_forcing(components, tensor, grid) -> MMSForcing:
    return MMSForcing(components, tensor, grid)


# ---------------------------------------------------------------------------
# orchestration


def initial_state(grid, tensor, profile, config: SolverConfig, forcing=None):
    nsteps, dt = config.time_grid(grid.h)
    return sample_data(profile, grid, tensor, dt, forcing), nsteps


def run(grid: ExteriorGrid, tensor: CoefficientTensor, profile: DataProfile, config: SolverConfig,
        diag_hooks: Optional[Callable] = None, forcing=None, step_hooks=()):
    """Integrate from 0 to T_final.

    ``diag_hooks(state, grid)`` is called every ``sample_every`` steps and at
    the last step while the next level is available; its return values are
    collected into the returned list.  ``step_hooks`` are called after every
    committed step.  A non-finite value raises NumericalAbort carrying the
    records gathered so far.
    """
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    if config.truncation == "exact_cone" and grid.R_out < config.T_final + profile.M0 + 2 * grid.h - 1e-9:
        raise ValueError(
            f"R_out = {grid.R_out} < T_final + M0 + 2h = {config.T_final + profile.M0 + 2 * grid.h}")
    forcing = forcing if forcing is not None else config.forcing
    state, nsteps = initial_state(grid, tensor, profile, config, forcing)
    records = []
    for n in range(nsteps + 1):
        try:
            advance(state, tensor, grid, config, forcing)
        except FloatingPointError as exc:
            raise NumericalAbort(str(exc), records) from exc
        if diag_hooks is not None and (n % config.sample_every == 0 or n == nsteps):
            records.append(diag_hooks(state, grid))
        if n == nsteps:
            break
        commit(state, grid)
        for hook in step_hooks:
            hook(state, grid)
    return records, state
