"""Cell-centered geometric multigrid for the folded potential system.

Transfers are averaging restriction (1/8 per child) and piecewise-constant
prolongation; coarse operators are the Galerkin product of the two with the
fine operator, which keeps the 7-point pattern. Smoothing is red-black
Gauss-Seidel, the coarsest level is solved with unpreconditioned CG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .electrostatics import StencilField
from .errors import ConfigurationError, SingularOperatorError, SolverError
from .grid import Field, Workers, exchange_ghosts, ordered_sum

_jit = dict(nogil=True, cache=True)


@dataclass(frozen=True)
class MgConfig:
    pre_smoothing: int = 3
    post_smoothing: int = 3
    correction_factor: float = 2.0
    tolerance: float = 1.5e-8
    max_cycles: int = 50
    max_levels: int = 7
    coarse_mode: str = "relative"
    coarse_tolerance: float = 1e-8
    coarse_iterations: int = 0
    normalised_residual: bool = False

    def __post_init__(self):
        if self.pre_smoothing + self.post_smoothing < 2:
            raise ConfigurationError("V-cycles need at least two smoothing steps in total")
        if self.coarse_mode not in ("relative", "fixed"):
            raise ConfigurationError(f"unknown coarse solver mode {self.coarse_mode!r}")
        if self.coarse_mode == "fixed" and self.coarse_iterations <= 0:
            raise ConfigurationError("fixed coarse solves need coarse_iterations > 0")
        if self.max_levels < 1:
            raise ConfigurationError("max_levels must be at least 1")


@nb.njit(**_jit)
def smooth_kernel(phi, rhs, table, index, parity, colour):
    nx, ny, nz = phi.shape
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            start = 1 + (1 + j + k + parity + colour) % 2
            for i in range(start, nx - 1, 2):
                s = table[index[i, j, k]]
                acc = (rhs[i, j, k]
                       - s[1] * phi[i - 1, j, k] - s[2] * phi[i + 1, j, k]
                       - s[3] * phi[i, j - 1, k] - s[4] * phi[i, j + 1, k]
                       - s[5] * phi[i, j, k - 1] - s[6] * phi[i, j, k + 1])
                phi[i, j, k] = acc / s[0]


@nb.njit(**_jit)
def apply_kernel(phi, table, index, out):
    nx, ny, nz = phi.shape
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                s = table[index[i, j, k]]
                out[i, j, k] = (s[0] * phi[i, j, k]
                                + s[1] * phi[i - 1, j, k] + s[2] * phi[i + 1, j, k]
                                + s[3] * phi[i, j - 1, k] + s[4] * phi[i, j + 1, k]
                                + s[5] * phi[i, j, k - 1] + s[6] * phi[i, j, k + 1])


@nb.njit(**_jit)
def residual_kernel(phi, rhs, table, index, out):
    nx, ny, nz = phi.shape
    total = 0.0
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                s = table[index[i, j, k]]
                r = rhs[i, j, k] - (s[0] * phi[i, j, k]
                                    + s[1] * phi[i - 1, j, k] + s[2] * phi[i + 1, j, k]
                                    + s[3] * phi[i, j - 1, k] + s[4] * phi[i, j + 1, k]
                                    + s[5] * phi[i, j, k - 1] + s[6] * phi[i, j, k + 1])
                out[i, j, k] = r
                total += r * r
    return total


@nb.njit(**_jit)
def restrict_kernel(fine, coarse):
    nx, ny, nz = coarse.shape
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                a, b, c = 2 * i - 1, 2 * j - 1, 2 * k - 1
                coarse[i, j, k] = 0.125 * (
                    fine[a, b, c] + fine[a + 1, b, c] + fine[a, b + 1, c] + fine[a + 1, b + 1, c]
                    + fine[a, b, c + 1] + fine[a + 1, b, c + 1] + fine[a, b + 1, c + 1]
                    + fine[a + 1, b + 1, c + 1])


@nb.njit(**_jit)
def prolongate_kernel(coarse, fine, factor):
    nx, ny, nz = fine.shape
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                fine[i, j, k] += factor * coarse[(i + 1) // 2, (j + 1) // 2, (k + 1) // 2]


@nb.njit(**_jit)
def galerkin_kernel(table, index, coef, private):
    """Coarse 7-point rows (interior coarse cells) from a fine stencil field."""
    cx, cy, cz = private.shape
    for K in range(cz):
        for J in range(cy):
            for I in range(cx):
                row = np.zeros(7)
                priv = False
                for dz in range(2):
                    for dy in range(2):
                        for dx in range(2):
                            i, j, k = 2 * I + 1 + dx, 2 * J + 1 + dy, 2 * K + 1 + dz
                            r = index[i, j, k]
                            if r != 0:
                                priv = True
                            s = table[r]
                            row[0] += s[0]
                            d = (dx, dy, dz)
                            for a in range(3):
                                if d[a] == 1:
                                    row[0] += s[1 + 2 * a]
                                    row[2 + 2 * a] += s[2 + 2 * a]
                                else:
                                    row[1 + 2 * a] += s[1 + 2 * a]
                                    row[0] += s[2 + 2 * a]
                for q in range(7):
                    coef[I, J, K, q] = 0.125 * row[q]
                private[I, J, K] = priv


def coarsen_row(stencil):
    """Galerkin coarse row of a cell whose 8 children share ``stencil``."""
    s = np.asarray(stencil, dtype=float)
    row = np.empty(7)
    row[0] = 0.125 * (8.0 * s[0] + 4.0 * s[1:].sum())
    row[1:] = 0.5 * s[1:]
    return row


def galerkin_coarsen(fine, coarse_domain):
    """Coarse :class:`StencilField` ``R A P`` of a fine stencil field."""
    d = coarse_domain
    n = d.block_cells
    g = d.ghost_width
    shared = coarsen_row(fine.shared)
    rows, owners = [], []
    coefs = []
    for bid in range(d.n_blocks):
        coef = np.zeros(n + (7,))
        private = np.zeros(n, dtype=np.bool_)
        galerkin_kernel(fine.table, fine.index[bid], coef, private)
        coefs.append((coef, private))
        rows.append(coef[private])
        owners.append(np.count_nonzero(private))
    index = Field(d, (), np.int32, 0)
    allrows = np.concatenate(rows) if rows else np.zeros((0, 7))
    if len(allrows):
        unique, inverse = np.unique(allrows, axis=0, return_inverse=True)
    else:
        unique, inverse = np.zeros((0, 7)), np.zeros(0, dtype=np.int64)
    start = 0
    for bid, (coef, private) in enumerate(coefs):
        idx = index[bid][g:g + n[0], g:g + n[1], g:g + n[2]]
        m = owners[bid]
        idx[private] = 1 + inverse.ravel()[start:start + m]
        start += m
    table = np.vstack([shared[None, :], unique])
    return StencilField(d, table, index)


def _parity(domain, bid):
    off = domain.block_offset(bid)
    return (sum(off) - 3 * domain.ghost_width) % 2


@dataclass
class Level:
    domain: object
    stencils: StencilField
    phi: Field
    rhs: Field
    residual: Field
    parity: list = field(default_factory=list)

    @property
    def n_cells(self):
        return self.domain.n_cells


class MultigridSolver:
    """V-cycle solver for a fixed stencil hierarchy.

    ``singular`` marks problems without a Dirichlet face; their coarsest
    right-hand side is mean-projected and the solution mean-normalised.
    """

    def __init__(self, stencils, config=None, workers=None, singular=False):
        self.config = config or MgConfig()
        self.singular = singular
        domain = stencils.domain
        self.workers = workers or Workers.serial(domain)
        self.levels = []
        current = stencils
        while True:
            d = current.domain
            zero = np.nonzero(current.table[:, 0] == 0.0)[0]
            if len(zero):
                raise SingularOperatorError("zero center coefficient", self._cell_of(current, zero[0]))
            self.levels.append(Level(d, current, Field(d), Field(d), Field(d),
                                     [_parity(d, b) for b in range(d.n_blocks)]))
            if len(self.levels) >= self.config.max_levels or not d.can_coarsen():
                break
            current = galerkin_coarsen(current, d.coarsened())
        self.history = []

    @staticmethod
    def _cell_of(stencils, row):
        d = stencils.domain
        g = d.ghost_width
        for bid in range(d.n_blocks):
            hit = np.argwhere(stencils.index[bid] == row)
            for h in hit:
                if all(g <= h[a] < g + d.block_cells[a] for a in range(3)):
                    off = d.block_offset(bid)
                    return tuple(int(off[a] + h[a] - g) for a in range(3))
        return None

    @property
    def phi(self):
        return self.levels[0].phi

    @property
    def rhs(self):
        return self.levels[0].rhs

    def _map(self, fn, domain):
        return self.workers.map(fn) if domain is self.workers.assignment.domain else [
            fn(b) for b in range(domain.n_blocks)]

    def smooth(self, lvl, sweeps):
        lv = self.levels[lvl]
        t = lv.stencils
        exchange_ghosts(lv.phi, "faces")
        for _ in range(sweeps):
            for colour in (0, 1):
                self._map(lambda b: smooth_kernel(lv.phi[b], lv.rhs[b], t.table, t.index[b],
                                                  lv.parity[b], colour), lv.domain)
                exchange_ghosts(lv.phi, "faces")

    def residual(self, lvl):
        lv = self.levels[lvl]
        t = lv.stencils
        parts = self._map(lambda b: residual_kernel(lv.phi[b], lv.rhs[b], t.table, t.index[b],
                                                    lv.residual[b]), lv.domain)
        norm = math.sqrt(ordered_sum(parts))
        if self.config.normalised_residual:
            norm /= math.sqrt(lv.n_cells)
        return norm

    def apply(self, lvl, x, out):
        lv = self.levels[lvl]
        t = lv.stencils
        exchange_ghosts(x, "faces")
        self._map(lambda b: apply_kernel(x[b], t.table, t.index[b], out[b]), lv.domain)

    def _dot(self, a, b):
        d = a.domain
        return ordered_sum([float(np.vdot(a.interior(i), b.interior(i))) for i in range(d.n_blocks)])

    def _mean(self, f):
        d = f.domain
        return ordered_sum([float(f.interior(i).sum()) for i in range(d.n_blocks)]) / d.n_cells

    def _project(self, f):
        m = self._mean(f)
        for i in range(f.domain.n_blocks):
            f.interior(i)[...] -= m

    def coarse_solve(self, lvl=None):
        """Unpreconditioned CG on one level; returns the iteration count."""
        lvl = len(self.levels) - 1 if lvl is None else lvl
        lv = self.levels[lvl]
        cfg = self.config
        if self.singular:
            self._project(lv.rhs)
        r, p, ap = lv.residual, Field(lv.domain), Field(lv.domain)
        self.residual(lvl)
        if self.singular:
            self._project(r)
        for b in range(lv.domain.n_blocks):
            p.interior(b)[...] = r.interior(b)
        rr = self._dot(r, r)
        rr0 = rr
        if cfg.coarse_mode == "fixed":
            budget, target = cfg.coarse_iterations, 0.0
        else:
            budget, target = max(10 * lv.n_cells, 100), (cfg.coarse_tolerance**2) * rr0
        it = 0
        while it < budget and rr > target and rr > 0.0:
            self.apply(lvl, p, ap)
            pap = self._dot(p, ap)
            if not pap > 0.0:
                raise SolverError(
                    "CG breakdown on the coarsest level: operator not positive definite; "
                    "check the potential boundary conditions")
            alpha = rr / pap
            for b in range(lv.domain.n_blocks):
                lv.phi.interior(b)[...] += alpha * p.interior(b)
                r.interior(b)[...] -= alpha * ap.interior(b)
            if self.singular:
                self._project(r)
            rr_new = self._dot(r, r)
            beta = rr_new / rr
            rr = rr_new
            for b in range(lv.domain.n_blocks):
                p.interior(b)[...] = r.interior(b) + beta * p.interior(b)
            it += 1
        if self.singular:
            self._project(lv.phi)
        exchange_ghosts(lv.phi, "faces")
        return it

    def restrict(self, lvl):
        fine, coarse = self.levels[lvl], self.levels[lvl + 1]
        for b in range(coarse.domain.n_blocks):
            restrict_kernel(fine.residual[b], coarse.rhs[b])

    def prolongate(self, lvl):
        fine, coarse = self.levels[lvl], self.levels[lvl + 1]
        factor = self.config.correction_factor
        for b in range(fine.domain.n_blocks):
            prolongate_kernel(coarse.phi[b], fine.phi[b], factor)
        exchange_ghosts(fine.phi, "faces")

    def _cycle(self, lvl):
        if lvl == len(self.levels) - 1:
            self.coarse_solve(lvl)
            return
        cfg = self.config
        self.smooth(lvl, cfg.pre_smoothing)
        self.residual(lvl)
        self.restrict(lvl)
        self.levels[lvl + 1].phi.fill(0.0)
        self._cycle(lvl + 1)
        self.prolongate(lvl)
        self.smooth(lvl, cfg.post_smoothing)

    def v_cycle(self):
        """One V-cycle on the finest level; returns the residual norm after it."""
        exchange_ghosts(self.phi, "faces")
        self._cycle(0)
        if self.singular:
            self._project(self.phi)
            exchange_ghosts(self.phi, "faces")
        return self.residual(0)

    def solve(self, max_cycles=None, tolerance=None):
        """Cycle until the residual norm drops below the tolerance.

        Returns ``(cycles, residual)``. At least one residual evaluation is
        done, so a converged start costs no cycle.
        """
        cfg = self.config
        max_cycles = cfg.max_cycles if max_cycles is None else max_cycles
        tol = cfg.tolerance if tolerance is None else tolerance
        exchange_ghosts(self.phi, "faces")
        res = self.residual(0)
        self.history = [res]
        cycles = 0
        while res >= tol and cycles < max_cycles:
            new = self.v_cycle()
            cycles += 1
            self.history.append(new)
            if not math.isfinite(new) or (res > 0.0 and new > 10.0 * res):
                raise SolverError(f"multigrid diverged in cycle {cycles}: residual {res:.3e} -> {new:.3e}")
            res = new
        return cycles, res


def dense_operator(stencils):
    """Global sparse-free dense matrix of a stencil field (small domains only)."""
    d = stencils.domain
    nx, ny, nz = d.global_cells
    n = d.n_cells
    A = np.zeros((n, n))
    g = d.ghost_width
    offsets = ((0, 0, 0), (-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))
    for bid in range(d.n_blocks):
        off = d.block_offset(bid)
        idx = stencils.index[bid]
        for lk in range(d.block_cells[2]):
            for lj in range(d.block_cells[1]):
                for li in range(d.block_cells[0]):
                    s = stencils.table[idx[li + g, lj + g, lk + g]]
                    x = (off[0] + li, off[1] + lj, off[2] + lk)
                    row = d.linear_index(*x)
                    for q, o in enumerate(offsets):
                        if s[q] == 0.0:
                            continue
                        y = [x[a] + o[a] for a in range(3)]
                        for a in range(3):
                            if d.periodicity[a]:
                                y[a] %= d.global_cells[a]
                        if not all(0 <= y[a] < d.global_cells[a] for a in range(3)):
                            raise SolverError(f"stencil at {x} couples across a physical boundary")
                        A[row, d.linear_index(*y)] += s[q]
    return A


def transfer_matrices(domain):
    """Dense averaging restriction and injection prolongation to the coarse grid."""
    c = domain.coarsened()
    nf, nc = domain.n_cells, c.n_cells
    P = np.zeros((nf, nc))
    nx, ny, nz = domain.global_cells
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                P[domain.linear_index(i, j, k), c.linear_index(i // 2, j // 2, k // 2)] = 1.0
    return P.T / 8.0, P
