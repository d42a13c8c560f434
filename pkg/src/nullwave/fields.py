"""Field storage and finite-difference operators on the exterior grid.

All operators act on arrays whose last two axes are the grid axes, so a
single component ``(n, n)`` and a stacked field ``(M, n, n)`` are treated
alike.  Fields that vanish on the obstacle boundary (the solution and its time
derivatives) use the Dirichlet value 0 at the cut point; derived fields such
as ``d_1 u`` use one-sided stencils built from exterior nodes only.
"""

from __future__ import annotations

import itertools
import struct
import weakref
from dataclasses import dataclass

import numpy as np

from nullwave.geometry import (
    BOUNDARY,
    DIRECTIONS,
    EAST,
    INTERIOR,
    NORTH,
    SOUTH,
    WEST,
    ExteriorGrid,
)

FIELD_MAGIC = b"NWFLD001"

# time order cap for Z^a: the state holds at most three consecutive levels
MAX_TIME_ORDER = 2


@dataclass
class FieldState:
    """The M-component solution at ``t - dt`` and ``t``.

    ``ut`` is the second-order estimate of ``d_t u(t)`` consumed by the
    nonlinearity; ``nxt`` holds ``u(t + dt)`` between the computation of a
    step and its commit, which is when diagnostics see centered derivatives.
    ``support_radius`` bounds the discrete domain of influence of ``cur``.
    """

    M: int
    t: float
    dt: float
    prev: np.ndarray
    cur: np.ndarray
    ut: np.ndarray
    nxt: np.ndarray | None = None
    step: int = 0
    support_radius: float = 0.0
    ut_next: np.ndarray | None = None
    spare: np.ndarray | None = None
    spare_ut: np.ndarray | None = None

    def copy(self):
        return FieldState(self.M, self.t, self.dt, self.prev.copy(), self.cur.copy(),
                          self.ut.copy(), None if self.nxt is None else self.nxt.copy(),
                          self.step, self.support_radius)

    def check_finite(self, grid):
        for name in ("cur", "nxt"):
            arr = getattr(self, name)
            if arr is None:
                continue
            bad = ~np.isfinite(arr)
            if bad.any():
                I, i, j = (int(v[0]) for v in np.nonzero(bad))
                raise FloatingPointError(
                    f"non-finite value in component {I + 1} at node "
                    f"({grid.x[i]:.6g}, {grid.x[j]:.6g}), t = {self.t:.6g}")


def zero_state(M, grid, dt):
    z = np.zeros((M, grid.n, grid.n))
    return FieldState(M, 0.0, dt, z.copy(), z.copy(), z.copy())


# ---------------------------------------------------------------------------
# spatial operators


def _shift(f, axis, k):
    """Value of the neighbour ``k`` nodes along ``axis`` (0 beyond the array)."""
    out = np.zeros_like(f)
    ax = f.ndim - 2 + axis
    n = f.shape[ax]
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    if k > 0:
        src[ax], dst[ax] = slice(k, n), slice(0, n - k)
    else:
        src[ax], dst[ax] = slice(0, n + k), slice(-k, n)
    out[tuple(dst)] = f[tuple(src)]
    return out


_ARM_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def arm_data(grid):
    """Indices and fractions of boundary nodes, per axis (cached per grid)."""
    data = _ARM_CACHE.get(grid)
    if data is not None:
        return data
    data = {}
    for axis, (p, m) in enumerate(((EAST, WEST), (NORTH, SOUTH))):
        sel = grid.cutarm[p] | grid.cutarm[m]
        ii, jj = np.nonzero(sel)
        data[axis] = (ii, jj, grid.cutarm[p][ii, jj], grid.cutarm[m][ii, jj],
                      grid.frac[p][ii, jj], grid.frac[m][ii, jj])
    _ARM_CACHE[grid] = data
    return data


def _neighbors(f, ii, jj, axis, k):
    di, dj = (k, 0) if axis == 0 else (0, k)
    i2 = np.clip(ii + di, 0, f.shape[-2] - 1)
    j2 = np.clip(jj + dj, 0, f.shape[-1] - 1)
    return f[..., i2, j2]


def derivative(f, grid: ExteriorGrid, axis: int, dirichlet: bool = True):
    """First derivative along ``axis`` (0 -> x1, 1 -> x2), second-order accurate.

    Central differences away from the obstacle.  On boundary-adjacent nodes the
    Dirichlet variant differentiates the quadratic through the two neighbours
    with value 0 at each cut point; the non-Dirichlet variant uses a one-sided
    three-point formula from the uncut side.
    """
    h = grid.h
    out = (_shift(f, axis, 1) - _shift(f, axis, -1)) / (2 * h)
    ii, jj, cp, cm, tp, tm = arm_data(grid)[axis]
    if ii.size:
        f0 = f[..., ii, jj]
        fp = _neighbors(f, ii, jj, axis, 1)
        fm = _neighbors(f, ii, jj, axis, -1)
        if dirichlet:
            hp = np.where(cp, tp, 1.0) * h
            hm = np.where(cm, tm, 1.0) * h
            fp = np.where(cp, 0.0, fp)
            fm = np.where(cm, 0.0, fm)
            val = (-hp / (hm * (hm + hp)) * fm + (hp - hm) / (hm * hp) * f0
                   + hm / (hp * (hm + hp)) * fp)
        else:
            active = grid.active
            di, dj = (1, 0) if axis == 0 else (0, 1)
            n = grid.n
            pp_ok = active[np.clip(ii + 2 * di, 0, n - 1), np.clip(jj + 2 * dj, 0, n - 1)]
            mm_ok = active[np.clip(ii - 2 * di, 0, n - 1), np.clip(jj - 2 * dj, 0, n - 1)]
            fpp = _neighbors(f, ii, jj, axis, 2)
            fmm = _neighbors(f, ii, jj, axis, -2)
            back = np.where(mm_ok, (3 * f0 - 4 * fm + fmm) / (2 * h), (f0 - fm) / h)
            fwd = np.where(pp_ok, (-3 * f0 + 4 * fp - fpp) / (2 * h), (fp - f0) / h)
            val = np.where(cp & cm, 0.0, np.where(cp, back, np.where(cm, fwd, (fp - fm) / (2 * h))))
        out[..., ii, jj] = val
    out[..., ~grid.active] = 0.0
    return out


def second_derivative(f, grid: ExteriorGrid, axis: int):
    """Compact second difference along ``axis`` with Shortley-Weller arms at the obstacle."""
    h = grid.h
    out = (_shift(f, axis, 1) - 2 * f + _shift(f, axis, -1)) / (h * h)
    ii, jj, cp, cm, tp, tm = arm_data(grid)[axis]
    if ii.size:
        f0 = f[..., ii, jj]
        tp_ = np.where(cp, tp, 1.0)
        tm_ = np.where(cm, tm, 1.0)
        fp = np.where(cp, 0.0, _neighbors(f, ii, jj, axis, 1))
        fm = np.where(cm, 0.0, _neighbors(f, ii, jj, axis, -1))
        out[..., ii, jj] = 2.0 / (h * h) * (fm / (tm_ * (tm_ + tp_)) + fp / (tp_ * (tm_ + tp_))
                                            - f0 / (tm_ * tp_))
    out[..., ~grid.active] = 0.0
    return out


def laplacian(f, grid: ExteriorGrid):
    """Five-point Laplacian with Shortley-Weller fractional arms (boundary value 0)."""
    return second_derivative(f, grid, 0) + second_derivative(f, grid, 1)


def spatial_derivs(f, grid: ExteriorGrid, dirichlet: bool = True):
    """(d_1 f, d_2 f)."""
    return derivative(f, grid, 0, dirichlet), derivative(f, grid, 1, dirichlet)


def apply_omega(f, grid: ExteriorGrid, dirichlet: bool = True):
    """Rotation field ``Omega f = x_1 d_2 f - x_2 d_1 f``."""
    d1, d2 = spatial_derivs(f, grid, dirichlet)
    x = grid.x
    return x[:, None] * d2 - x[None, :] * d1


# ---------------------------------------------------------------------------
# time derivatives and vector fields


def time_derivative(state: FieldState):
    """Returns ``(d_t u, order)``: centered when ``nxt`` is present, else backward."""
    if state.nxt is not None:
        return (state.nxt - state.prev) / (2 * state.dt), 2
    return (state.cur - state.prev) / state.dt, 1


def time_derivative_k(state: FieldState, k: int):
    if k == 0:
        return state.cur
    if k == 1:
        return time_derivative(state)[0]
    if k == 2:
        if state.nxt is None:
            raise ValueError("second time derivative needs the next level")
        return (state.nxt - 2 * state.cur + state.prev) / state.dt ** 2
    raise ValueError(f"at most {MAX_TIME_ORDER} time derivatives are available, asked for {k}")


def apply_spatial_Z(b, f, grid, dirichlet=True):
    """Apply d_1^{b0} d_2^{b1} Omega^{b2} (Omega first) to ``f``."""
    nb1, nb2, nom = b
    g = f
    for _ in range(nom):
        g = apply_omega(g, grid, dirichlet)
        dirichlet = False
    for _ in range(nb2):
        g = derivative(g, grid, 1, dirichlet)
        dirichlet = False
    for _ in range(nb1):
        g = derivative(g, grid, 0, dirichlet)
        dirichlet = False
    return g


def apply_Z(a, state: FieldState, grid: ExteriorGrid, z_max: int = 2):
    """``Z^a u = d_t^{a1} d_1^{a2} d_2^{a3} Omega^{a4} u`` for a multi-index of length 4."""
    a = tuple(int(v) for v in a)
    if len(a) != 4 or min(a) < 0:
        raise ValueError(f"multi-index must have four nonnegative entries, got {a}")
    if sum(a) > z_max:
        raise ValueError(f"|a| = {sum(a)} exceeds z_max = {z_max}")
    base = time_derivative_k(state, a[0])
    return apply_spatial_Z(a[1:], base, grid)


def multi_indices(order, length=4):
    """All multi-indices of the given length with total order <= ``order``."""
    out = []
    for total in range(order + 1):
        for combo in itertools.product(range(total + 1), repeat=length):
            if sum(combo) == total:
                out.append(combo)
    return out


def z_fields(state: FieldState, grid: ExteriorGrid, order: int):
    """Dict ``a -> Z^a u`` for every |a| <= order, sharing intermediate results."""
    out = {}
    for a in multi_indices(order):
        if a[0] > MAX_TIME_ORDER:
            raise ValueError("time order exceeds stored levels")
        nb1, nb2, nom = a[1:]
        if sum(a[1:]) == 0:
            out[a] = time_derivative_k(state, a[0])
            continue
        # peel the last-applied operator: d_1 first, then d_2, then Omega
        if nb1:
            parent = (a[0], nb1 - 1, nb2, nom)
            op = lambda g, dr: derivative(g, grid, 0, dr)  # noqa: E731
        elif nb2:
            parent = (a[0], 0, nb2 - 1, nom)
            op = lambda g, dr: derivative(g, grid, 1, dr)  # noqa: E731
        else:
            parent = (a[0], 0, 0, nom - 1)
            op = lambda g, dr: apply_omega(g, grid, dr)  # noqa: E731
        out[a] = op(out[parent], sum(parent[1:]) == 0)
    return out


def good_derivative(state: FieldState, grid: ExteriorGrid, i: int, f=None, ft=None):
    """``(x_i/|x|) d_t f + d_i f`` for i in {1, 2}; zero on nodes with ``|x| < h``.

    With ``f``/``ft`` omitted, ``f`` is the solution and ``ft`` its time derivative.
    """
    if f is None:
        f, ft = state.cur, time_derivative(state)[0]
        dirichlet = True
    else:
        dirichlet = False
    r = grid.radius
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(r >= grid.h, (grid.x[:, None] if i == 1 else grid.x[None, :]) / r, 0.0)
    out = w * ft + derivative(f, grid, i - 1, dirichlet)
    out[..., r < grid.h] = 0.0
    out[..., ~grid.active] = 0.0
    return out


def gradient_stack(state: FieldState, grid: ExteriorGrid):
    """(M, 3, n, n) array of (d_t, d_1, d_2) used by the nonlinearity.

    The time derivative is centered when ``nxt`` is present, otherwise the
    solver's estimate ``ut``.
    """
    ut = (state.nxt - state.prev) / (2 * state.dt) if state.nxt is not None else state.ut
    d1, d2 = spatial_derivs(state.cur, grid)
    return np.stack([ut, d1, d2], axis=1)


# ---------------------------------------------------------------------------
# snapshots


def write_snapshot(path, state: FieldState):
    """NWFLD001: magic, (M, n) as int64, (t, dt) as float64, then prev and cur levels."""
    n = state.cur.shape[-1]
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC + struct.pack("<qqdd", state.M, n, state.t, state.dt))
        for level in (state.prev, state.cur):
            fh.write(np.ascontiguousarray(level, dtype="<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        head = fh.read(40)
        if head[:8] != FIELD_MAGIC:
            raise ValueError(f"{path}: not a NWFLD001 file")
        M, n, t, dt = struct.unpack("<qqdd", head[8:])
        body = np.frombuffer(fh.read(), dtype="<f8").reshape(2, M, n, n)
    return {"M": M, "n": n, "t": t, "dt": dt, "prev": body[0].copy(), "cur": body[1].copy()}


__all__ = [
    "FieldState", "apply_Z", "apply_omega", "derivative", "good_derivative", "laplacian",
    "second_derivative", "spatial_derivs", "time_derivative", "z_fields", "INTERIOR", "BOUNDARY",
    "DIRECTIONS",
]
