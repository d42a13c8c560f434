"""Compactly supported initial data, time derivatives at t = 0, compatibility checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np

from nullwave import fields
from nullwave.geometry import ExteriorGrid
from nullwave.nullforms import CoefficientTensor, assemble_rhs

K_MAX_CAP = 6


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Bump:
    center: tuple[float, float]
    radius: float
    amplitude: float = 1.0

    def __call__(self, x1, x2):
        """``A exp(1 - 1/(1 - s))`` with ``s = |x - c|^2 / r^2`` inside the disk, 0 outside."""
        s = ((x1 - self.center[0]) ** 2 + (x2 - self.center[1]) ** 2) / self.radius ** 2
        out = np.zeros(np.broadcast(x1, x2).shape)
        inside = s < 1.0
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return out

    def derivatives(self, x1, x2):
        """Closed-form (b, d_1 b, d_2 b, Laplacian b) on the given points."""
        r2 = self.radius ** 2
        y1 = x1 - self.center[0]
        y2 = x2 - self.center[1]
        s = (y1 ** 2 + y2 ** 2) / r2
        inside = s < 1.0
        shape = np.broadcast(x1, x2).shape
        b = np.zeros(shape)
        g1 = np.zeros(shape)
        g2 = np.zeros(shape)
        lap = np.zeros(shape)
        si = s[inside]
        phi = 1.0 / (1.0 - si)
        bi = self.amplitude * np.exp(1.0 - phi)
        b[inside] = bi
        # grad b = -2 b phi^2 (x - c) / r^2
        w = -2.0 * phi ** 2 / r2
        g1[inside] = bi * w * np.broadcast_to(y1, shape)[inside]
        g2[inside] = bi * w * np.broadcast_to(y2, shape)[inside]
        lap[inside] = 4.0 * bi * phi ** 2 / r2 * (phi ** 2 * si - 2.0 * phi * si - 1.0)
        return b, g1, g2, lap

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius, "amplitude": self.amplitude}


@dataclass
class DataProfile:
    """Bump superpositions for u0 and u1, one list per component."""

    u0: list[list[Bump]]
    u1: list[list[Bump]]
    epsilon: float = 0.1
    M0: float = 3.0

    @property
    def M(self):
        return len(self.u0)

    def validate(self):
        if len(self.u1) != len(self.u0):
            raise DataError("u0 and u1 must list the same number of components")
        if not self.M0 > 1:
            raise DataError("M0 must exceed 1")
        for comp in self.u0 + self.u1:
            for b in comp:
                if not b.radius > 0:
                    raise DataError("bump radius must be positive")
                if np.hypot(*b.center) + b.radius > self.M0 * (1 + 1e-12):
                    raise DataError(
                        f"bump at {b.center} with radius {b.radius} leaves the disk |x| <= M0 = {self.M0}")

    def evaluate(self, which, x1, x2):
        bumps = self.u0 if which == 0 else self.u1
        return np.stack([sum((b(x1, x2) for b in comp), np.zeros(np.broadcast(x1, x2).shape))
                         for comp in bumps])

    def to_dict(self):
        return {"epsilon": self.epsilon, "M0": self.M0,
                "u0": [[b.to_dict() for b in c] for c in self.u0],
                "u1": [[b.to_dict() for b in c] for c in self.u1]}


def zero_profile(M, M0=3.0, epsilon=0.1):
    return DataProfile([[] for _ in range(M)], [[] for _ in range(M)], epsilon, M0)


def profile_from_dict(spec: dict) -> DataProfile:
    def bumps(lst):
        return [[Bump(tuple(b["center"]), float(b["radius"]), float(b.get("amplitude", 1.0)))
                 for b in comp] for comp in lst]
    u0 = bumps(spec.get("u0", []))
    u1 = bumps(spec.get("u1", [[] for _ in u0]))
    prof = DataProfile(u0, u1, float(spec.get("epsilon", 0.1)), float(spec.get("M0", 3.0)))
    prof.validate()
    return prof


def bumps_touch_obstacle(profile: DataProfile, grid: ExteriorGrid) -> bool:
    bx, by = grid.shape.boundary_points(4096)
    for comp in profile.u0 + profile.u1:
        for b in comp:
            if np.min(np.hypot(bx - b.center[0], by - b.center[1])) <= b.radius:
                return True
            if grid.shape.inside(*b.center):
                return True
    return False


def sample_data(profile: DataProfile, grid: ExteriorGrid, tensor: CoefficientTensor, dt: float,
                forcing=None, compat_check: bool = False) -> fields.FieldState:
    """State at t = 0 with a second-order Taylor start for the level at ``-dt``.

    ``u(-dt) = eps u0 - dt eps u1 + dt^2/2 (Lap_h eps u0 + F(0) + g(0))``.
    """
    profile.validate()
    if profile.M != tensor.M:
        raise DataError(f"profile has {profile.M} components, tensor has M = {tensor.M}")
    if not compat_check and bumps_touch_obstacle(profile, grid):
        raise DataError("initial data support meets the obstacle; request a compatibility check")
    X1, X2 = grid.X1, grid.X2
    active = grid.active
    cur = profile.epsilon * profile.evaluate(0, X1, X2)
    ut = profile.epsilon * profile.evaluate(1, X1, X2)
    cur[:, ~active] = 0.0
    ut[:, ~active] = 0.0
    state = fields.FieldState(profile.M, 0.0, dt, np.zeros_like(cur), cur, ut,
                              support_radius=profile.M0)
    accel = fields.laplacian(cur, grid) + assemble_rhs(state, tensor, grid)
    if forcing is not None:
        accel = accel + forcing.evaluate(0.0)
    state.prev = cur - dt * ut + 0.5 * dt * dt * accel
    state.prev[:, ~active] = 0.0
    return state


def _sobolev_norm_sq(f, grid: ExteriorGrid, order: int):
    """Sum over the distinct partials d_1^i d_2^j f, i + j <= order, of their squared L2 norms."""
    level = [f]
    total = 0.0
    act = grid.active
    for k in range(order + 1):
        total += sum(float(np.sum(np.square(g[..., act]))) for g in level) * grid.h ** 2
        if k == order:
            break
        # level[i] holds d_1^i d_2^(k-i) f; only f itself vanishes at the obstacle
        dirichlet = k == 0
        level = ([fields.derivative(level[0], grid, 1, dirichlet)]
                 + [fields.derivative(g, grid, 0, dirichlet) for g in level])
    return total


def h4_norm(profile: DataProfile, grid: ExteriorGrid) -> float:
    """Discrete ``||eps u0||_{H^4} + ||eps u1||_{H^3}`` used as the data-size proxy."""
    u0 = profile.epsilon * profile.evaluate(0, grid.X1, grid.X2)
    u1 = profile.epsilon * profile.evaluate(1, grid.X1, grid.X2)
    u0[:, ~grid.active] = 0.0
    u1[:, ~grid.active] = 0.0
    return float(np.sqrt(_sobolev_norm_sq(u0, grid, 4)) + np.sqrt(_sobolev_norm_sq(u1, grid, 3)))


def _tderiv_of_product(Fk, dF, tensor, m):
    """d_t^m of sum q u^J d_a u^K d_b u^L at t = 0 by the Leibniz rule.

    ``Fk[j]`` is d_t^j u and ``dF[j]`` is the (M, 3, n, n) stack
    (d_t^{j+1} u, d_1 d_t^j u, d_2 d_t^j u).
    """
    out = np.zeros_like(Fk[0])
    I, J, K, L, A, B, V = tensor.entries()
    for m1 in range(m + 1):
        for m2 in range(m - m1 + 1):
            m3 = m - m1 - m2
            coef = comb(m, m1) * comb(m - m1, m2)
            for i, j, k, l, a, b, v in zip(I, J, K, L, A, B, V):
                out[i] += coef * v * Fk[m1][j] * dF[m2][k, a] * dF[m3][l, b]
    return out


def timederivs_at_zero(profile: DataProfile, grid: ExteriorGrid, tensor: CoefficientTensor,
                       k_max: int):
    """F_k = d_t^k u(0) for k <= k_max from the equation, all derivatives discrete."""
    if k_max > K_MAX_CAP:
        raise DataError(f"k_max = {k_max} exceeds the cap {K_MAX_CAP}")
    active = grid.active
    F = [profile.epsilon * profile.evaluate(0, grid.X1, grid.X2),
         profile.epsilon * profile.evaluate(1, grid.X1, grid.X2)]
    for f in F:
        f[:, ~active] = 0.0
    F = F[: k_max + 1]

    def dstack(j):
        d1, d2 = fields.spatial_derivs(F[j], grid)
        return np.stack([F[j + 1], d1, d2], axis=1)

    dF = []
    for k in range(2, k_max + 1):
        while len(dF) < k - 1:
            dF.append(dstack(len(dF)))
        nxt = fields.laplacian(F[k - 2], grid)
        if not tensor.is_zero():
            nxt = nxt + _tderiv_of_product(F, dF, tensor, k - 2)
        nxt[:, ~active] = 0.0
        if not np.all(np.isfinite(nxt)):
            raise DataError(f"non-finite value in F_{k}")
        F.append(nxt)
    return F


@dataclass
class CompatReport:
    order: int
    tol: float
    residual: float
    per_k: list[float] = field(default_factory=list)
    passed: bool = True

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def boundary_trace(f, grid: ExteriorGrid):
    """Linear extrapolation of ``f`` from each boundary-adjacent node to its cut points."""
    vals = []
    from nullwave.geometry import DIRECTIONS, OPPOSITE
    for d in range(4):
        ii, jj = np.nonzero(grid.cutarm[d])
        if not ii.size:
            continue
        th = grid.frac[d, ii, jj]
        oi = ii + DIRECTIONS[OPPOSITE[d]][0]
        oj = jj + DIRECTIONS[OPPOSITE[d]][1]
        opp_ok = grid.active[oi, oj]
        f0 = f[..., ii, jj]
        fo = np.where(opp_ok, f[..., oi, oj], f0)
        vals.append(f0 + th * (f0 - fo))
    if not vals:
        return np.zeros(f.shape[:-2] + (0,))
    return np.concatenate(vals, axis=-1)


def check_compatibility(profile: DataProfile, grid: ExteriorGrid, tensor: CoefficientTensor,
                        order: int = 4, tol: float = 1e-12) -> CompatReport:
    """Largest boundary trace of F_0 .. F_order; passes when it is at most ``tol``."""
    F = timederivs_at_zero(profile, grid, tensor, order)
    per_k = []
    for f in F:
        tr = boundary_trace(f, grid)
        per_k.append(float(np.max(np.abs(tr))) if tr.size else 0.0)
    res = max(per_k)
    return CompatReport(order, tol, res, per_k, res <= tol)
