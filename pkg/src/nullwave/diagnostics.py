"""Energies, weighted sup-norms, ghost-weight integrals, inequality ratios and decay fits.

Weights use the Japanese bracket ``<s> = sqrt(1 + s^2)``.  Derivatives of the
vector fields ``Z^a`` come from :func:`nullwave.fields.z_fields`; since the
partial derivatives commute, ``d_alpha Z^a u`` is again a ``Z^b u`` with
``|b| = |a| + 1``, so a single table of order ``z_max`` serves every quantity.
"""

from __future__ import annotations

import csv
import io
import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from nullwave import fields
from nullwave.geometry import ExteriorGrid

EPS2 = 1e-3
GHOST_POWER = 1.1
FLOOR = 1e-14
SUP_INNER_RADIUS = 1.0


def japanese(s):
    return np.sqrt(1.0 + np.square(s))


@dataclass(frozen=True)
class WeightSpec:
    mu: float = 0.0
    nu: float = 0.0


def weight_W(spec: WeightSpec, t, r):
    """``<t+r>^mu * min(<r>, <t-r>)^nu`` with ``r = |x|``."""
    r = np.asarray(r, dtype=float)
    return japanese(t + r) ** spec.mu * np.minimum(japanese(r), japanese(t - r)) ** spec.nu


_GEOM: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


class _Geom:
    """Per-grid arrays reused by every reduction (radius, float masks, direction weights)."""

    def __init__(self, grid: ExteriorGrid):
        self.r = grid.radius
        self.active = grid.active.astype(float)
        keep = self.r >= grid.h
        with np.errstate(invalid="ignore", divide="ignore"):
            self.w1 = np.where(keep, grid.x[:, None] / self.r, 0.0)
            self.w2 = np.where(keep, grid.x[None, :] / self.r, 0.0)
        self.far = self.active * (self.r >= SUP_INNER_RADIUS)
        self.regions = {}

    def region(self, grid, R):
        m = self.regions.get(R)
        if m is None:
            m = self.regions[R] = grid.region(R).astype(float)
        return m


def _geom(grid) -> _Geom:
    g = _GEOM.get(grid)
    if g is None:
        g = _GEOM[grid] = _Geom(grid)
    return g


def _l2sq(f, grid: ExteriorGrid, region=None):
    """Squared discrete L2 norm over active nodes, optionally restricted to a node set.

    ``region`` is a boolean mask or a float 0/1 mask.
    """
    if region is None:
        m = _geom(grid).active
    elif region.dtype == bool:
        m = (region & grid.active).astype(float)
    else:
        m = region
    return float(np.sum(f * f * m)) * grid.h ** 2


def energy(state: fields.FieldState, grid: ExteriorGrid) -> float:
    """``sum_I ||d u^I||^2`` over non-obstacle nodes with full-cell weights."""
    ft, _ = fields.time_derivative(state)
    d1, d2 = fields.spatial_derivs(state.cur, grid)
    return _l2sq(ft, grid) + _l2sq(d1, grid) + _l2sq(d2, grid)


def _e(k):
    e = [0, 0, 0, 0]
    e[k] = 1
    return e


def _plus(a, k):
    return tuple(x + y for x, y in zip(a, _e(k)))


def good_parts(z, a, grid: ExteriorGrid):
    """The two components ``(x_i/|x|) d_t Z^a u + d_i Z^a u``; zero where ``|x| < h``."""
    ft = z[_plus(a, 0)]
    geo = _geom(grid)
    keep = geo.r >= grid.h
    g1 = geo.w1 * ft + z[_plus(a, 1)] * keep
    g2 = geo.w2 * ft + z[_plus(a, 2)] * keep
    return g1, g2


def ghost_increment(state, grid: ExteriorGrid, a, z=None) -> float:
    """``int_K |good derivative of Z^a u|^2 / <t - |x|>^1.1 dx`` at the current time."""
    if z is None:
        z = fields.z_fields(state, grid, sum(a) + 1)
    g1, g2 = good_parts(z, tuple(a), grid)
    w = japanese(state.t - _geom(grid).r) ** (-GHOST_POWER) * _geom(grid).active
    return float(np.sum((g1 * g1 + g2 * g2) * w)) * grid.h ** 2


def _masked_max(f, sel):
    """max |f| over a node set given as a boolean mask or a nonnegative float weight."""
    if sel.dtype == bool:
        sel = sel.astype(float)
    if f.size == 0 or sel.size == 0:
        return 0.0
    return float(np.max(np.abs(f) * sel))


@dataclass
class Sups:
    S_grad: float
    S_good: float
    S_u: float
    S_good_global: float

    def __iter__(self):
        return iter((self.S_grad, self.S_good, self.S_u))


def weighted_sups(state, grid: ExteriorGrid, z_max: int = 2, z=None, region=None) -> Sups:
    """Maxima of the weighted solution, gradient and good-derivative norms over ``|x| >= 1``."""
    if z_max < 1:
        raise ValueError("z_max must be at least 1")
    if z is None:
        z = fields.z_fields(state, grid, z_max)
    t = state.t
    geo = _geom(grid)
    r = geo.r
    base = geo.far if region is None else geo.far * region
    good_region = base * (r >= 1.0 + t / 2)
    w_grad = np.sqrt(japanese(r)) * japanese(t - r) * base
    w_good_glob = np.sqrt(japanese(r)) * japanese(t + r) ** (1.0 - EPS2) * base
    w_good = w_good_glob * good_region
    w_u = japanese(t + r) ** (0.5 - EPS2) * base
    s_grad = s_good = s_glob = s_u = 0.0
    for a, f in z.items():
        order = sum(a)
        if order > z_max:
            continue
        s_u = max(s_u, _masked_max(f, w_u))
        if order < z_max:
            for k in range(3):
                s_grad = max(s_grad, _masked_max(z[_plus(a, k)], w_grad))
            for g in good_parts(z, a, grid):
                s_good = max(s_good, _masked_max(g, w_good))
                s_glob = max(s_glob, _masked_max(g, w_good_glob))
    return Sups(s_grad, s_good, s_u, s_glob)


def local_energy(state, grid: ExteriorGrid, R: float, z_max: int = 2, z=None) -> float:
    """``sum_{|a| <= z_max} ||d^a u||^2`` on K_R, with d = (d_t, d_1, d_2)."""
    if z is None:
        z = fields.z_fields(state, grid, z_max)
    reg = _geom(grid).region(grid, R)
    return sum(_l2sq(f, grid, reg) for a, f in z.items() if a[3] == 0 and sum(a) <= z_max)


def fit_decay(series, window):
    """Least-squares slope of ``log value`` against ``log t`` on ``window``.

    Returns ``(exponent, stderr)``.  Values below 1e-14 count as floor noise
    and are dropped; more than half the window floored is an error.
    """
    lo, hi = window
    pts = [(float(t), float(v)) for t, v in series if lo <= t <= hi]
    if len(pts) < 8:
        raise ValueError(f"need at least 8 samples in [{lo}, {hi}], got {len(pts)}")
    if any(not math.isfinite(v) or v < 0 for _, v in pts):
        raise ValueError("values must be finite and nonnegative")
    if any(t <= 0 for t, _ in pts):
        raise ValueError("times must be positive for a log-log fit")
    kept = [(t, v) for t, v in pts if v >= FLOOR]
    if len(kept) * 2 < len(pts):
        raise ValueError(f"{len(pts) - len(kept)} of {len(pts)} samples are below the {FLOOR} floor")
    if len(kept) < 3:
        raise ValueError("too few samples above the floor")
    lt = np.log([t for t, _ in kept])
    lv = np.log([v for _, v in kept])
    res = linregress(lt, lv)
    return float(res.slope), float(res.stderr)


class InconsistentRatio(ArithmeticError):
    """A norm ratio has a zero denominator and a nonzero numerator."""


def _ratio(num, den, what):
    if num == 0:
        return 0.0
    if den == 0:
        raise InconsistentRatio(f"{what}: zero denominator with nonzero numerator {num:.3e}")
    return num / den


def hardy_ratio(f, grid: ExteriorGrid, t: float, M0: float | None = None) -> float:
    """``||f / <t - |x|>|| / ||grad_h f||`` (L2 over K)."""
    if M0 is not None:
        outside = grid.radius > t + M0 + 1e-9
        if np.any(f[..., outside] != 0):
            raise ValueError(f"field is not supported in |x| <= t + M0 = {t + M0}")
    num = math.sqrt(_l2sq(f / japanese(t - _geom(grid).r), grid))
    d1, d2 = fields.spatial_derivs(f, grid)
    den = math.sqrt(_l2sq(d1, grid) + _l2sq(d2, grid))
    return _ratio(num, den, "hardy ratio")


def sobolev_ratio(f, grid: ExteriorGrid, z=None) -> float:
    """``max <x>^{1/2} |f| / sum_{|a|<=2} ||Z^a f||`` with spatial fields (d_1, d_2, Omega)."""
    num = _masked_max(f, np.sqrt(japanese(_geom(grid).r)) * _geom(grid).active)
    den = 0.0
    for b in fields.multi_indices(2, length=3):
        if z is not None:
            g = z[(0,) + b]
        else:
            g = fields.apply_spatial_Z(b, f, grid)
        den += math.sqrt(_l2sq(g, grid))
    return _ratio(num, den, "sobolev ratio")


def elliptic_ratio(w, grid: ExteriorGrid, R: float = 1.0) -> float:
    """Hessian norm over ``||Lap_h w|| + ||w||_{H^1(K_{R+1})}``.

    The numerator is ``(||w_11||^2 + 2||w_12||^2 + ||w_22||^2)^{1/2}``, which
    equals ``||Lap w||`` for compactly supported ``w`` in free space.
    """
    w11 = fields.second_derivative(w, grid, 0)
    w22 = fields.second_derivative(w, grid, 1)
    d1, d2 = fields.spatial_derivs(w, grid)
    w12 = fields.derivative(d2, grid, 0, dirichlet=False)
    num = math.sqrt(_l2sq(w11, grid) + 2 * _l2sq(w12, grid) + _l2sq(w22, grid))
    reg = _geom(grid).region(grid, R + 1)
    h1 = math.sqrt(_l2sq(w, grid, reg) + _l2sq(d1, grid, reg) + _l2sq(d2, grid, reg))
    den = math.sqrt(_l2sq(w11 + w22, grid)) + h1
    return _ratio(num, den, "elliptic ratio")


def measured_support(f, grid: ExteriorGrid) -> float:
    """Largest ``|x|`` of a node where any component is nonzero."""
    nz = np.any(f != 0, axis=0) if f.ndim == 3 else f != 0
    if not nz.any():
        return 0.0
    return float(np.max(grid.radius[nz]))


# ---------------------------------------------------------------------------
# records and series


@dataclass
class DiagnosticRecord:
    t: float
    energy: float
    local_energy: dict
    ghost_cumulative: float
    S_grad: float
    S_good: float
    S_u: float
    support_radius: float
    hardy_ratio: float
    sobolev_ratio: float
    elliptic_ratio: float
    u_linf: dict = field(default_factory=dict)
    S_good_global: float = 0.0

    def values(self):
        out = [self.t, self.energy]
        out += [self.local_energy[R] for R in sorted(self.local_energy)]
        out += [self.ghost_cumulative, self.S_grad, self.S_good, self.S_u, self.support_radius,
                self.hardy_ratio, self.sobolev_ratio, self.elliptic_ratio]
        out += [self.u_linf[R] for R in sorted(self.u_linf)]
        out.append(self.S_good_global)
        return out


def _rlabel(R):
    return f"{R:g}"


def csv_header(radii):
    radii = sorted(radii)
    return (["t", "energy"] + [f"local_energy_R{_rlabel(R)}" for R in radii]
            + ["ghost_cum", "S_grad", "S_good", "S_u", "support_radius", "hardy", "sobolev",
               "elliptic"]
            + [f"u_linf_R{_rlabel(R)}" for R in radii] + ["S_good_global"])


@dataclass
class DiagnosticSeries:
    radii: tuple = (2.0,)
    records: list = field(default_factory=list)

    def append(self, rec: DiagnosticRecord):
        self.records.append(rec)

    def column(self, name):
        header = csv_header(self.radii)
        k = header.index(name)
        return np.array([r.values()[k] for r in self.records])

    def pairs(self, name):
        return list(zip(self.column("t"), self.column(name)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(csv_header(self.radii))
        for rec in self.records:
            wr.writerow([repr(float(v)) for v in rec.values()])
        return buf.getvalue()


def read_series_csv(path):
    """Column name -> numpy array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body]) if body else np.zeros((0, len(header)))
    return {name: data[:, k] for k, name in enumerate(header)}


class Monitor:
    """Diagnostics hook for :func:`nullwave.solver.run`.

    Works on the smallest centred sub-grid that contains the discrete domain
    of influence, and accumulates the ghost-weight integral with the
    trapezoidal rule between samples.
    """

    def __init__(self, grid: ExteriorGrid, z_max: int = 2, radii=(2.0,), M0=None, ratios=True):
        if z_max < 1:
            raise ValueError("z_max must be at least 1")
        self.grid = grid
        self.z_max = int(z_max)
        self.radii = tuple(float(R) for R in radii)
        self.M0 = M0
        self.ratios = ratios
        self.series = DiagnosticSeries(self.radii)
        self._ghost_cum = 0.0
        self._last = None
        self._crop = None

    def _subgrid(self, R):
        step = 32 * self.grid.h
        R = math.ceil(R / step) * step
        if self._crop is None or self._crop[0] < R:
            self._crop = (R,) + self.grid.crop(R)
        return self._crop[1], self._crop[2]

    def __call__(self, state, grid=None) -> DiagnosticRecord:
        rec = self.evaluate(state)
        self.series.append(rec)
        return rec

    def evaluate(self, state) -> DiagnosticRecord:
        R = max(state.support_radius + 3 * self.grid.h, max(self.radii) + 3 * self.grid.h)
        g, sl = self._subgrid(R)

        def sub(a):
            return None if a is None else a[:, sl, sl]

        st = fields.FieldState(state.M, state.t, state.dt, sub(state.prev), sub(state.cur),
                               sub(state.ut), sub(state.nxt), state.step, state.support_radius)
        z = fields.z_fields(st, g, self.z_max)
        t = st.t
        ghost = sum(ghost_increment(st, g, a, z) for a in z if sum(a) <= self.z_max - 1)
        if self._last is not None:
            t0, g0 = self._last
            self._ghost_cum += 0.5 * (g0 + ghost) * (t - t0)
        self._last = (t, ghost)
        sups = weighted_sups(st, g, self.z_max, z)
        le = {R_: local_energy(st, g, R_, self.z_max, z) for R_ in self.radii}
        linf = {R_: _masked_max(st.cur, _geom(g).region(g, R_)) for R_ in self.radii}
        hr = sr = er = 0.0
        if self.ratios:
            for I in range(st.M):
                hr = max(hr, hardy_ratio(st.cur[I], g, t))
                sr = max(sr, sobolev_ratio(st.cur[I], g, {a: f[I] for a, f in z.items()}))
                er = max(er, elliptic_ratio(st.cur[I], g))
        rec = DiagnosticRecord(
            t=t, energy=energy(st, g), local_energy=le, ghost_cumulative=self._ghost_cum,
            S_grad=sups.S_grad, S_good=sups.S_good, S_u=sups.S_u,
            support_radius=measured_support(st.cur, g), hardy_ratio=hr, sobolev_ratio=sr,
            elliptic_ratio=er, u_linf=linf, S_good_global=sups.S_good_global)
        bad = [v for v in rec.values() if not math.isfinite(v)]
        if bad:
            raise FloatingPointError(f"non-finite diagnostic at t = {t:.6g}")
        return rec
