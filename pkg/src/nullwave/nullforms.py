"""Null forms, the null condition for cubic coefficient tensors, and the right-hand side.

A cubic nonlinearity is stored as the coefficient array ``q[I, J, K, L, a, b]``
of ``u^J * d_a u^K * d_b u^L`` in the equation for ``u^I`` (derivative index
0 is time, 1 and 2 are space).  It satisfies the null condition when its symbol
``q^{ab} xi_a xi_b`` vanishes on the light cone; for a quadratic symbol that
reduces to a handful of linear identities, checked in :func:`check_null`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

PAIRS = ((0, 1), (0, 2), (1, 2))


class NullConditionError(ValueError):
    pass


def eval_q0(df, dg):
    """Q0(f, g) = f_t g_t - f_1 g_1 - f_2 g_2 for derivative triples (arrays broadcast)."""
    return df[0] * dg[0] - df[1] * dg[1] - df[2] * dg[2]


def eval_qab(alpha, beta, df, dg):
    if not (0 <= alpha <= 2 and 0 <= beta <= 2):
        raise IndexError(f"null form indices must lie in 0..2, got ({alpha}, {beta})")
    return df[alpha] * dg[beta] - df[beta] * dg[alpha]


@dataclass
class CoefficientTensor:
    q: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        M = q.shape[0]
        if q.ndim != 6 or q.shape != (M, M, M, M, 3, 3):
            raise ValueError(f"tensor must have shape (M,M,M,M,3,3), got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("tensor entries must be finite")
        self.q = q

    @property
    def M(self):
        return self.q.shape[0]

    def is_zero(self):
        return not np.any(self.q)

    def entries(self):
        """Nonzero entries as parallel arrays (I, J, K, L, alpha, beta, value)."""
        idx = np.nonzero(self.q)
        return tuple(np.asarray(i, dtype=np.int64) for i in idx) + (self.q[idx],)

    def blocks(self):
        """(I, J, K, L) index tuples of blocks holding any nonzero coefficient."""
        nz = np.any(self.q != 0, axis=(4, 5))
        return [tuple(int(v) for v in ix) for ix in zip(*np.nonzero(nz))]

    def to_text(self) -> str:
        I, J, K, L, a, b, v = self.entries()
        lines = [f"# M = {self.M}"]
        for row in zip(I, J, K, L, a, b, v):
            lines.append("{} {} {} {} {} {} {!r}".format(*(int(t) + 1 for t in row[:4]),
                                                         int(row[4]), int(row[5]), float(row[6])))
        return "\n".join(lines) + "\n"


def read_tensor(path) -> CoefficientTensor:
    """Parse the text format: one ``I J K L alpha beta value`` line per nonzero entry.

    Component indices are 1-based, derivative indices 0..2.  ``#`` starts a
    comment; a ``# M = <int>`` comment fixes the component count, otherwise it
    is the largest component index seen.
    """
    rows = []
    M = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                body = line[1:].replace(" ", "")
                if body.startswith("M="):
                    M = max(M, int(body[2:]))
                continue
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                comps = [int(p) for p in parts[:4]]
                a, b = int(parts[4]), int(parts[5])
                val = float(parts[6])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if min(comps) < 1 or not (0 <= a <= 2 and 0 <= b <= 2):
                raise ValueError(f"{path}:{lineno}: index out of range")
            rows.append((comps, a, b, val))
            M = max(M, *comps)
    if M == 0:
        raise ValueError(f"{path}: no entries")
    q = np.zeros((M, M, M, M, 3, 3))
    for (I, J, K, L), a, b, val in rows:
        q[I - 1, J - 1, K - 1, L - 1, a, b] += val
    return CoefficientTensor(q, name=str(path))


def _q0_block():
    blk = np.zeros((3, 3))
    blk[0, 0], blk[1, 1], blk[2, 2] = 1.0, -1.0, -1.0
    return blk


def preset(name: str) -> CoefficientTensor:
    """Built-in coefficient tensors.

    ``linear`` (M=1, zero), ``cubic`` (M=1, u Q0(u,u)), ``wavemap``
    (M=2, C_IJKL = delta_IJ delta_KL with Q0), ``mixed`` (wavemap plus Q01 and
    Q12 couplings) and ``nonnull`` (wavemap plus an extra (d_t u^1)^2 term in
    the (1,1,1,1) block).  The numerical values are modelling choices.
    """
    if name == "linear":
        return CoefficientTensor(np.zeros((1, 1, 1, 1, 3, 3)), name=name)
    if name == "cubic":
        q = np.zeros((1, 1, 1, 1, 3, 3))
        q[0, 0, 0, 0] = _q0_block()
        return CoefficientTensor(q, name=name)
    if name in ("wavemap", "mixed", "nonnull"):
        M = 2
        q = np.zeros((M, M, M, M, 3, 3))
        for I, K in itertools.product(range(M), repeat=2):
            q[I, I, K, K] = _q0_block()
        if name == "mixed":
            q[0, 0, 0, 1, 0, 1], q[0, 0, 0, 1, 1, 0] = 0.5, -0.5
            q[1, 1, 0, 1, 1, 2], q[1, 1, 0, 1, 2, 1] = 0.5, -0.5
        if name == "nonnull":
            q[0, 0, 0, 0, 0, 0] += 1.0
        return CoefficientTensor(q, name=name)
    raise KeyError(f"unknown coefficient preset {name!r}")


PRESETS = ("linear", "cubic", "wavemap", "mixed", "nonnull")


@dataclass
class BlockVerdict:
    index: tuple[int, int, int, int]
    passed: bool
    sampled_max: float
    violations: list[str] = field(default_factory=list)


@dataclass
class NullReport:
    passed: bool
    blocks: list[BlockVerdict]

    @property
    def failing(self):
        return [b for b in self.blocks if not b.passed]


def light_cone_samples(n_angles=16):
    """Covectors (+-1, cos th, sin th) on ``n_angles`` equally spaced directions."""
    th = 2 * np.pi * np.arange(n_angles) / n_angles
    xi = []
    for s in (1.0, -1.0):
        xi.append(np.stack([np.full_like(th, s), np.cos(th), np.sin(th)], axis=1))
    return np.concatenate(xi)


def symbol_max(block, xi):
    vals = np.einsum("na,ab,nb->n", xi, block, xi)
    return float(np.max(np.abs(vals)))


def block_violations(blk, atol=0.0):
    out = []
    for a, b in PAIRS:
        s = blk[a, b] + blk[b, a]
        if abs(s) > atol:
            out.append(f"q^{a}{b} + q^{b}{a} = {s:.6g} != 0")
    if abs(blk[1, 1] + blk[0, 0]) > atol:
        out.append(f"q^11 = {blk[1, 1]:.6g} != -q^00 = {-blk[0, 0]:.6g}")
    if abs(blk[2, 2] + blk[0, 0]) > atol:
        out.append(f"q^22 = {blk[2, 2]:.6g} != -q^00 = {-blk[0, 0]:.6g}")
    return out


def check_null(tensor: CoefficientTensor, atol: float = 0.0) -> NullReport:
    """Per-block null-condition verdicts.

    The verdict is algebraic: on ``{+-1} x S^1`` the symbol equals
    ``(q00 + q11 cos^2 + q22 sin^2) + (q12+q21) cos sin +- ((q01+q10) cos + (q02+q20) sin)``,
    which vanishes identically iff the three symmetric off-diagonal sums vanish
    and ``q11 = q22 = -q00``.  The 32-point sampled maximum is reported as a
    cross-check only.
    """
    xi = light_cone_samples(16)
    verdicts = []
    for ix in tensor.blocks():
        blk = tensor.q[ix]
        viol = block_violations(blk, atol)
        verdicts.append(BlockVerdict(ix, not viol, symbol_max(blk, xi), viol))
    return NullReport(all(v.passed for v in verdicts), verdicts)


@dataclass
class NullDecomposition:
    c0: np.ndarray      # (M, M, M, M)
    cab: np.ndarray     # (M, M, M, M, 3) for the pairs (0,1), (0,2), (1,2)

    def nonzero_terms(self):
        terms = []
        for ix in zip(*np.nonzero(self.c0)):
            terms.append(("Q0", tuple(int(i) for i in ix), float(self.c0[ix])))
        for ix in zip(*np.nonzero(self.cab)):
            a, b = PAIRS[ix[4]]
            terms.append((f"Q{a}{b}", tuple(int(i) for i in ix[:4]), float(self.cab[ix])))
        return terms


def decompose_null(tensor: CoefficientTensor) -> NullDecomposition:
    report = check_null(tensor)
    if not report.passed:
        bad = report.failing[0]
        raise NullConditionError(
            f"block {tuple(i + 1 for i in bad.index)} is not null: {'; '.join(bad.violations)}")
    q = tensor.q
    c0 = q[..., 0, 0].copy()
    cab = np.stack([(q[..., a, b] - q[..., b, a]) / 2 for a, b in PAIRS], axis=-1)
    return NullDecomposition(c0, cab)


def reconstruct(dec: NullDecomposition, d, e):
    """Evaluate ``c0 Q0(d, e) + sum cab Q_ab(d, e)`` blockwise for triples d, e."""
    out = dec.c0 * eval_q0(d, e)
    for k, (a, b) in enumerate(PAIRS):
        out = out + dec.cab[..., k] * eval_qab(a, b, d, e)
    return out


def cubic_term(tensor: CoefficientTensor, u, du):
    """F^I = sum q[I,J,K,L,a,b] u^J du^K_a du^L_b.

    ``u`` has shape (M, ...) and ``du`` shape (M, 3, ...); returns (M, ...).
    """
    out = np.zeros_like(u)
    I, J, K, L, a, b, v = tensor.entries()
    for i, j, k, l, al, be, val in zip(I, J, K, L, a, b, v):
        out[i] += val * u[j] * du[k, al] * du[l, be]
    return out


def assemble_rhs(state, tensor: CoefficientTensor, grid):
    """Cubic right-hand side on the grid; zero on obstacle and exterior nodes.

    Time derivatives are centered when the state carries the next level,
    otherwise the solver's second-order estimate ``state.ut`` is used.
    """
    from nullwave.fields import gradient_stack  # local import: fields depends on geometry only

    if tensor.M != state.M:
        raise ValueError(f"tensor has M={tensor.M}, state has M={state.M}")
    if tensor.is_zero():
        return np.zeros_like(state.cur)
    du = gradient_stack(state, grid)
    F = cubic_term(tensor, state.cur, du)
    F[:, ~grid.active] = 0.0
    bad = ~np.isfinite(F)
    if bad.any():
        I, i, j = (int(v[0]) for v in np.nonzero(bad))
        raise FloatingPointError(
            f"non-finite nonlinearity in component {I + 1} at node ({grid.x[i]:.6g}, {grid.x[j]:.6g})")
    return F
