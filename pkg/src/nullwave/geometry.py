"""Star-shaped obstacles and the masked Cartesian grid of the exterior domain.

The obstacle is the region ``{r < rho(theta)}`` for a positive trigonometric
radial graph ``rho``.  The grid is uniform, centred on the origin, and stores
for every node next to the obstacle the distance to the boundary along each
grid line (in units of ``h``), which the Shortley-Weller stencils consume.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

OBSTACLE = 0
INTERIOR = 1
BOUNDARY = 2
EXTERIOR = 3

# direction order used by ``frac``: +x1, -x1, +x2, -x2
EAST, WEST, NORTH, SOUTH = 0, 1, 2, 3
DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))
OPPOSITE = (WEST, EAST, SOUTH, NORTH)

# Boundary nodes closer than this fraction to the boundary are slaved to their
# opposite neighbour by linear interpolation instead of being evolved; keeps the
# explicit scheme stable for cfl <= 0.5 (Gershgorin bound with two cut arms).
THETA_MIN = 1.0 / 3.0

# nodes with r - rho <= _ON_BOUNDARY_TOL * max(1, rho) are treated as obstacle
_ON_BOUNDARY_TOL = 1e-12

GRID_MAGIC = b"NWGRID01"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ObstacleShape:
    kind: str = "disk"
    r0: float = 0.3
    fourier_coeffs: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("disk", "star"):
            raise GeometryError(f"unknown obstacle kind {self.kind!r}")
        coeffs = tuple((float(a), float(b)) for a, b in self.fourier_coeffs)
        object.__setattr__(self, "fourier_coeffs", coeffs)
        if self.kind == "disk" and coeffs:
            raise GeometryError("a disk obstacle takes no Fourier coefficients")

    def rho(self, theta):
        """Boundary radius ``r0 * (1 + sum_k a_k cos k theta + b_k sin k theta)``."""
        theta = np.asarray(theta, dtype=float)
        s = np.ones_like(theta)
        for k, (a, b) in enumerate(self.fourier_coeffs, start=1):
            s = s + a * np.cos(k * theta) + b * np.sin(k * theta)
        return self.r0 * s

    def inside(self, x1, x2):
        """Closed obstacle test: True where ``|x| <= rho(arg x)`` up to roundoff."""
        r = np.hypot(x1, x2)
        rho = self.rho(np.arctan2(x2, x1))
        return r - rho <= _ON_BOUNDARY_TOL * np.maximum(1.0, rho)

    def boundary_points(self, n=2048):
        theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        rho = self.rho(theta)
        return rho * np.cos(theta), rho * np.sin(theta)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "r0": self.r0,
                "fourier_coeffs": [list(c) for c in self.fourier_coeffs]}


@dataclass
class ValidationReport:
    min_rho: float
    max_rho: float
    ok: bool
    messages: list[str] = field(default_factory=list)


def _refine_extremum(shape, theta0, width, sign):
    res = minimize_scalar(lambda th: sign * float(shape.rho(th)),
                          bounds=(theta0 - width, theta0 + width),
                          method="bounded", options={"xatol": 1e-12})
    return min(sign * res.fun, sign * float(shape.rho(theta0))) * sign


def validate_shape(shape: ObstacleShape) -> ValidationReport:
    """Extrema of the radial graph and the check ``0 < min rho, max rho < 1/2``.

    Raises GeometryError for non-finite coefficients or a non-positive radius.
    """
    values = [shape.r0] + [v for c in shape.fourier_coeffs for v in c]
    if not np.all(np.isfinite(values)):
        raise GeometryError("obstacle coefficients must be finite")
    kmax = max(1, len(shape.fourier_coeffs))
    n = max(8192, 256 * kmax)
    theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    rho = shape.rho(theta)
    width = 2 * np.pi / n
    if shape.fourier_coeffs:
        rmin = _refine_extremum(shape, theta[np.argmin(rho)], width, 1.0)
        rmax = _refine_extremum(shape, theta[np.argmax(rho)], width, -1.0)
    else:
        rmin = rmax = float(shape.r0)
    if rmin <= 0:
        raise GeometryError(f"radial graph is not positive (min rho = {rmin:.6g})")
    messages = []
    if rmax >= 0.5:
        messages.append(f"max rho = {rmax:.6g} violates the normalization max rho < 1/2")
    return ValidationReport(min_rho=float(rmin), max_rho=float(rmax), ok=not messages,
                            messages=messages)


@dataclass(frozen=True, eq=False)
class ExteriorGrid:
    """Uniform node grid on ``[-R_out, R_out]^2``; arrays use ``[i1, i2]`` indexing."""

    shape: ObstacleShape
    h: float
    R_out: float
    n: int
    x: np.ndarray            # 1-D node coordinates, shared by both axes
    mask: np.ndarray         # int8 (n, n)
    frac: np.ndarray         # (4, n, n) fractions in (0, 1]; 1 on uncut arms
    cutarm: np.ndarray       # (4, n, n) bool; arm of a boundary node ends in the obstacle
    slave_dir: np.ndarray    # int8 (n, n); cut direction of slaved nodes, else -1
    slave_coef: np.ndarray   # (n, n) interpolation weight of slaved nodes

    @property
    def X1(self):
        return self.x[:, None] * np.ones((1, self.n))

    @property
    def X2(self):
        return np.ones((self.n, 1)) * self.x[None, :]

    @property
    def radius(self):
        return np.hypot(self.x[:, None], self.x[None, :])

    @property
    def active(self):
        """Nodes where the solution lives (interior or boundary-adjacent)."""
        return (self.mask == INTERIOR) | (self.mask == BOUNDARY)

    def cut(self, d):
        """Boolean mask of nodes whose arm in direction ``d`` ends in the obstacle."""
        return self.cutarm[d]

    def region(self, R):
        """K_R as a node mask: active nodes with ``|x| <= R``."""
        return self.active & (self.radius <= R + 1e-12 * self.h)

    def crop(self, R):
        """Centred sub-grid covering ``[-R, R]^2`` and the index slice that cuts it out.

        Operators on the sub-grid agree with the full grid for fields that
        vanish within two nodes of the crop edge.
        """
        c = self.n // 2
        m = min(c, int(np.ceil(R / self.h)) + 2)
        if m == c:
            return self, slice(None)
        sl = slice(c - m, c + m + 1)
        sub = ExteriorGrid(shape=self.shape, h=self.h, R_out=m * self.h, n=2 * m + 1,
                           x=self.x[sl], mask=self.mask[sl, sl], frac=self.frac[:, sl, sl],
                           cutarm=self.cutarm[:, sl, sl], slave_dir=self.slave_dir[sl, sl],
                           slave_coef=self.slave_coef[sl, sl])
        return sub, sl

    def index_of(self, x1, x2):
        c = self.n // 2
        return int(round(x1 / self.h)) + c, int(round(x2 / self.h)) + c

    def dump(self, path):
        """Write the NWGRID01 snapshot: header, then mask and the four frac planes."""
        with open(path, "wb") as fh:
            fh.write(GRID_MAGIC + struct.pack("<qdd", self.n, self.h, self.R_out))
            fh.write(np.ascontiguousarray(self.mask, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.frac, dtype="<f8").tobytes())


def read_grid_dump(path):
    with open(path, "rb") as fh:
        head = fh.read(32)
        if head[:8] != GRID_MAGIC:
            raise GeometryError(f"{path}: not a NWGRID01 file")
        n, h, R_out = struct.unpack("<qdd", head[8:])
        body = np.frombuffer(fh.read(), dtype="<f8")
    mask = body[: n * n].reshape(n, n).astype(np.int8)
    frac = body[n * n:].reshape(4, n, n)
    return {"n": n, "h": h, "R_out": R_out, "mask": mask, "frac": frac}


def _bisect_crossing(shape, p1, p2, d1, d2, h, iters=64):
    """Fraction s in (0, 1] where p + s*h*d first enters the closed obstacle.

    Vectorized bisection on the radial equation; returns the upper end of the
    final bracket, so a crossing exactly at the neighbour yields 1.0.
    """
    lo = np.zeros_like(p1)
    hi = np.ones_like(p1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ins = shape.inside(p1 + mid * h * d1, p2 + mid * h * d2)
        hi = np.where(ins, mid, hi)
        lo = np.where(ins, lo, mid)
    # a crossing within the closed-obstacle tolerance of the neighbour is the neighbour itself
    return np.where(1.0 - hi <= 4 * _ON_BOUNDARY_TOL / h, 1.0, hi)


def build_grid(shape: ObstacleShape, h: float, R_out: float,
               allow_coarse: bool = False) -> ExteriorGrid:
    """Classify nodes and compute boundary fractions.

    Raises GeometryError when ``h > min rho / 4`` unless ``allow_coarse`` is
    set (useful for small illustrative grids).
    """
    if not h > 0:
        raise GeometryError("grid spacing must be positive")
    if not R_out > 1:
        raise GeometryError("R_out must exceed 1")
    report = validate_shape(shape)
    if not report.ok:
        raise GeometryError("; ".join(report.messages))
    if h > report.min_rho / 4 and not allow_coarse:
        raise GeometryError(
            f"h = {h} under-resolves the obstacle (need h <= min rho / 4 = {report.min_rho / 4:.6g})")

    c = int(np.ceil(R_out / h - 1e-9))
    n = 2 * c + 1
    x = (np.arange(n) - c) * h
    R_eff = c * h
    X1 = x[:, None] * np.ones((1, n))
    X2 = np.ones((n, 1)) * x[None, :]
    r = np.hypot(X1, X2)

    obstacle = shape.inside(X1, X2)
    mask = np.full((n, n), INTERIOR, dtype=np.int8)
    mask[obstacle] = OBSTACLE
    # outermost layer (and everything past the inscribed circle) is held at zero
    mask[r > R_eff - h + 1e-9 * h] = EXTERIOR

    frac = np.ones((4, n, n))
    cutarm = np.zeros((4, n, n), dtype=bool)
    boundary = np.zeros((n, n), dtype=bool)
    for d, (di, dj) in enumerate(DIRECTIONS):
        nb_obst = np.zeros((n, n), dtype=bool)
        nb_obst[max(0, -di):n - max(0, di), max(0, -dj):n - max(0, dj)] = \
            obstacle[max(0, di):n - max(0, -di), max(0, dj):n - max(0, -dj)]
        cut = nb_obst & (mask == INTERIOR)
        cutarm[d] = cut
        boundary |= cut
        ii, jj = np.nonzero(cut)
        if ii.size:
            frac[d, ii, jj] = _bisect_crossing(shape, x[ii], x[jj],
                                               float(di), float(dj), h)
    mask[boundary & (mask == INTERIOR)] = BOUNDARY

    slave_dir = np.full((n, n), -1, dtype=np.int8)
    slave_coef = np.zeros((n, n))
    ii, jj = np.nonzero(mask == BOUNDARY)
    for i, j in zip(ii, jj):
        thetas = frac[:, i, j]
        order = np.argsort(thetas, kind="stable")
        if thetas[order[0]] >= THETA_MIN:
            continue
        for d in order:
            if thetas[d] >= THETA_MIN:
                break
            oi, oj = i + DIRECTIONS[OPPOSITE[d]][0], j + DIRECTIONS[OPPOSITE[d]][1]
            if mask[oi, oj] in (INTERIOR, BOUNDARY) and frac[:, oi, oj].min() >= THETA_MIN:
                slave_dir[i, j] = d
                slave_coef[i, j] = thetas[d] / (1.0 + thetas[d])
                break
        else:
            # no usable opposite neighbour: pin to the boundary value
            slave_dir[i, j] = 4
            slave_coef[i, j] = 0.0
        if slave_dir[i, j] == -1:
            slave_dir[i, j] = 4

    return ExteriorGrid(shape=shape, h=float(h), R_out=float(R_eff), n=n, x=x, mask=mask,
                        frac=frac, cutarm=cutarm, slave_dir=slave_dir, slave_coef=slave_coef)


def shape_from_config(spec: dict) -> ObstacleShape:
    coeffs: Sequence = spec.get("fourier_coeffs", ())
    return ObstacleShape(kind=spec.get("kind", "disk"), r0=float(spec.get("r0", 0.3)),
                         fourier_coeffs=tuple(tuple(c) for c in coeffs))
