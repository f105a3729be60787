"""D3Q19 incompressible two-relaxation-time lattice Boltzmann kernel.

Populations are stored post-collision in two ghost-padded arrays per block
(source and destination, swapped every step). The fused kernel pulls
``f_q(x) = f~_q(x - c_q)`` from the source, computes moments, relaxes even and
odd parts separately and writes the new post-collision state to the
destination. Boundary handling only has to place suitable values into the
source slots of non-fluid neighbours before the kernel runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ConfigurationError, NumericDivergenceError
from .grid import FLUID, Field

Q = 19
CS2 = 1.0 / 3.0
RHO0 = 1.0

VELOCITIES = np.array(
    [
        (0, 0, 0),
        (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
        (1, 1, 0), (-1, -1, 0), (1, -1, 0), (-1, 1, 0),
        (1, 0, 1), (-1, 0, -1), (1, 0, -1), (-1, 0, 1),
        (0, 1, 1), (0, -1, -1), (0, 1, -1), (0, -1, 1),
    ],
    dtype=np.int64,
)
WEIGHTS = np.array([1 / 3] + [1 / 18] * 6 + [1 / 36] * 12)
OPPOSITE = np.array([0] + [q + 1 if q % 2 else q - 1 for q in range(1, Q)], dtype=np.int64)

W_REST = 1.0 / 3.0
W_AXIS = 1.0 / 18.0
W_DIAG = 1.0 / 36.0

MAGIC_MID = 3.0 / 16.0
MAGIC_POR = 1.0 / 4.0


@dataclass(frozen=True)
class TrtParams:
    """Relaxation rates of the even and odd population parts."""

    tau: float
    magic: float = MAGIC_MID

    def __post_init__(self):
        if not self.tau > 0.5:
            raise ConfigurationError(f"relaxation time must exceed 1/2, got {self.tau}")
        lo = self.lambda_o
        if not -2.0 < lo < 0.0:
            raise ConfigurationError(f"odd relaxation rate {lo} outside (-2, 0)")

    @property
    def omega(self):
        return 1.0 / self.tau

    @property
    def lambda_e(self):
        return -1.0 / self.tau

    @property
    def lambda_o(self):
        w = self.omega
        if self.magic == MAGIC_MID:
            return -8.0 * (2.0 - w) / (8.0 - w)
        if self.magic == MAGIC_POR:
            return -(2.0 - w)
        return 1.0 / (self.magic / (0.5 + 1.0 / self.lambda_e) - 0.5)

    @property
    def viscosity(self):
        return (self.tau - 0.5) * CS2

    @classmethod
    def from_name(cls, tau, name):
        name = str(name).strip().lower()
        table = {"mid": MAGIC_MID, "por": MAGIC_POR}
        if name in table:
            return cls(tau, table[name])
        try:
            return cls(tau, float(name))
        except ValueError:
            raise ConfigurationError(f"unknown magic parameter {name!r} (mid, por or a number)") from None


def equilibrium(rho, u, rho0=RHO0):
    """Incompressible equilibrium, returned as ``(total, even, odd)``."""
    u = np.asarray(u, dtype=float)
    cu = VELOCITIES @ u
    even = WEIGHTS * (rho - rho0 * (u @ u) / (2 * CS2) + rho0 * cu**2 / (2 * CS2**2))
    odd = WEIGHTS * rho0 * cu / CS2
    return even + odd, even, odd


def forcing_term(u, f_ext):
    """Luo body-force populations for velocity ``u`` and force density ``f_ext``."""
    u = np.asarray(u, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    cu = VELOCITIES @ u
    cf = VELOCITIES @ f_ext
    return WEIGHTS * ((cf - u @ f_ext) / CS2 + cu * cf / CS2**2)


def macroscopics(f, f_ext=(0.0, 0.0, 0.0), dt=1.0, rho0=RHO0):
    """Density and half-step force-corrected velocity of one cell."""
    f = np.asarray(f, dtype=float)
    rho = f[0] + (f[1:7].sum() + f[7:].sum())
    u = (VELOCITIES.T @ f + 0.5 * dt * np.asarray(f_ext, dtype=float)) / rho0
    return rho, u


_jit = dict(nogil=True, cache=True)


@nb.njit(**_jit)
def _density(f, i, j, k):
    axis = 0.0
    for q in range(1, 7):
        axis += f[i, j, k, q]
    diag = 0.0
    for q in range(7, 19):
        diag += f[i, j, k, q]
    return f[i, j, k, 0] + (axis + diag)


@nb.njit(**_jit)
def stream_collide_kernel(src, dst, flags, lam_e, lam_o, force, force_field, fluid_mask):
    """Fused pull-stream and TRT collision on one padded block.

    ``force_field`` is either empty (uniform ``force``) or a per-cell array
    added to ``force``. Returns the first non-finite cell or (-1, -1, -1).
    """
    ke = 1.0 + 0.5 * lam_e
    ko = 1.0 + 0.5 * lam_o
    per_cell = force_field.shape[0] > 0
    nx, ny, nz = flags.shape
    bad = (-1, -1, -1)
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                if not (flags[i, j, k] & fluid_mask):
                    continue
                f0 = src[i, j, k, 0]
                f1 = src[i - 1, j, k, 1]
                f2 = src[i + 1, j, k, 2]
                f3 = src[i, j - 1, k, 3]
                f4 = src[i, j + 1, k, 4]
                f5 = src[i, j, k - 1, 5]
                f6 = src[i, j, k + 1, 6]
                f7 = src[i - 1, j - 1, k, 7]
                f8 = src[i + 1, j + 1, k, 8]
                f9 = src[i - 1, j + 1, k, 9]
                f10 = src[i + 1, j - 1, k, 10]
                f11 = src[i - 1, j, k - 1, 11]
                f12 = src[i + 1, j, k + 1, 12]
                f13 = src[i - 1, j, k + 1, 13]
                f14 = src[i + 1, j, k - 1, 14]
                f15 = src[i, j - 1, k - 1, 15]
                f16 = src[i, j + 1, k + 1, 16]
                f17 = src[i, j - 1, k + 1, 17]
                f18 = src[i, j + 1, k - 1, 18]
                rho = f0 + ((f1 + f2 + f3 + f4 + f5 + f6) + (f7 + f8 + f9 + f10 + f11 + f12 + f13 + f14 + f15 + f16 + f17 + f18))
                jx = f1 - f2 + f7 - f8 + f9 - f10 + f11 - f12 + f13 - f14
                jy = f3 - f4 + f7 - f8 - f9 + f10 + f15 - f16 + f17 - f18
                jz = f5 - f6 + f11 - f12 - f13 + f14 + f15 - f16 - f17 + f18
                gx = force[0]
                gy = force[1]
                gz = force[2]
                if per_cell:
                    gx += force_field[i, j, k, 0]
                    gy += force_field[i, j, k, 1]
                    gz += force_field[i, j, k, 2]
                ux = jx + 0.5 * gx
                uy = jy + 0.5 * gy
                uz = jz + 0.5 * gz
                usq = ux * ux + uy * uy + uz * uz
                uf = ux * gx + uy * gy + uz * gz
                if not (rho == rho and usq == usq):
                    if bad[0] < 0:
                        bad = (i, j, k)
                    continue
                base = rho - 1.5 * usq
                dst[i, j, k, 0] = f0 + lam_e * (f0 - W_REST * base) - ke * W_REST * 3.0 * uf
                cu = ux
                cf = gx
                even = lam_e * (0.5 * (f1 + f2) - W_AXIS * (base + 4.5 * cu * cu)) + ke * W_AXIS * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f1 - f2) - W_AXIS * 3.0 * cu) + ko * W_AXIS * 3.0 * cf
                dst[i, j, k, 1] = f1 + even + odd
                dst[i, j, k, 2] = f2 + even - odd
                cu = uy
                cf = gy
                even = lam_e * (0.5 * (f3 + f4) - W_AXIS * (base + 4.5 * cu * cu)) + ke * W_AXIS * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f3 - f4) - W_AXIS * 3.0 * cu) + ko * W_AXIS * 3.0 * cf
                dst[i, j, k, 3] = f3 + even + odd
                dst[i, j, k, 4] = f4 + even - odd
                cu = uz
                cf = gz
                even = lam_e * (0.5 * (f5 + f6) - W_AXIS * (base + 4.5 * cu * cu)) + ke * W_AXIS * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f5 - f6) - W_AXIS * 3.0 * cu) + ko * W_AXIS * 3.0 * cf
                dst[i, j, k, 5] = f5 + even + odd
                dst[i, j, k, 6] = f6 + even - odd
                cu = ux + uy
                cf = gx + gy
                even = lam_e * (0.5 * (f7 + f8) - W_DIAG * (base + 4.5 * cu * cu)) + ke * W_DIAG * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f7 - f8) - W_DIAG * 3.0 * cu) + ko * W_DIAG * 3.0 * cf
                dst[i, j, k, 7] = f7 + even + odd
                dst[i, j, k, 8] = f8 + even - odd
                cu = ux - uy
                cf = gx - gy
                even = lam_e * (0.5 * (f9 + f10) - W_DIAG * (base + 4.5 * cu * cu)) + ke * W_DIAG * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f9 - f10) - W_DIAG * 3.0 * cu) + ko * W_DIAG * 3.0 * cf
                dst[i, j, k, 9] = f9 + even + odd
                dst[i, j, k, 10] = f10 + even - odd
                cu = ux + uz
                cf = gx + gz
                even = lam_e * (0.5 * (f11 + f12) - W_DIAG * (base + 4.5 * cu * cu)) + ke * W_DIAG * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f11 - f12) - W_DIAG * 3.0 * cu) + ko * W_DIAG * 3.0 * cf
                dst[i, j, k, 11] = f11 + even + odd
                dst[i, j, k, 12] = f12 + even - odd
                cu = ux - uz
                cf = gx - gz
                even = lam_e * (0.5 * (f13 + f14) - W_DIAG * (base + 4.5 * cu * cu)) + ke * W_DIAG * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f13 - f14) - W_DIAG * 3.0 * cu) + ko * W_DIAG * 3.0 * cf
                dst[i, j, k, 13] = f13 + even + odd
                dst[i, j, k, 14] = f14 + even - odd
                cu = uy + uz
                cf = gy + gz
                even = lam_e * (0.5 * (f15 + f16) - W_DIAG * (base + 4.5 * cu * cu)) + ke * W_DIAG * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f15 - f16) - W_DIAG * 3.0 * cu) + ko * W_DIAG * 3.0 * cf
                dst[i, j, k, 15] = f15 + even + odd
                dst[i, j, k, 16] = f16 + even - odd
                cu = uy - uz
                cf = gy - gz
                even = lam_e * (0.5 * (f17 + f18) - W_DIAG * (base + 4.5 * cu * cu)) + ke * W_DIAG * (9.0 * cu * cf - 3.0 * uf)
                odd = lam_o * (0.5 * (f17 - f18) - W_DIAG * 3.0 * cu) + ko * W_DIAG * 3.0 * cf
                dst[i, j, k, 17] = f17 + even + odd
                dst[i, j, k, 18] = f18 + even - odd
    return bad


@nb.njit(**_jit)
def moments_kernel(pdf, flags, force, fluid_mask, rho_out, u_out):
    """Density and velocity of every fluid interior cell.

    The stored populations are post-collision, whose momentum is ``j + F``;
    the velocity used in that collision is ``j + F/2``, i.e. ``sum - F/2``.
    """
    nx, ny, nz = flags.shape
    for k in range(1, nz - 1):
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                if not (flags[i, j, k] & fluid_mask):
                    rho_out[i, j, k] = 0.0
                    u_out[i, j, k, 0] = 0.0
                    u_out[i, j, k, 1] = 0.0
                    u_out[i, j, k, 2] = 0.0
                    continue
                rho_out[i, j, k] = _density(pdf, i, j, k)
                p = pdf[i, j, k]
                jx = p[1] - p[2] + p[7] - p[8] + p[9] - p[10] + p[11] - p[12] + p[13] - p[14]
                jy = p[3] - p[4] + p[7] - p[8] - p[9] + p[10] + p[15] - p[16] + p[17] - p[18]
                jz = p[5] - p[6] + p[11] - p[12] - p[13] + p[14] + p[15] - p[16] - p[17] + p[18]
                u_out[i, j, k, 0] = jx - 0.5 * force[0]
                u_out[i, j, k, 1] = jy - 0.5 * force[1]
                u_out[i, j, k, 2] = jz - 0.5 * force[2]


@nb.njit(**_jit)
def set_equilibrium_kernel(pdf, flags, mask, rho, u):
    """Set equilibrium populations in every interior cell matching ``mask``."""
    c = np.array(
        [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
         [1, 1, 0], [-1, -1, 0], [1, -1, 0], [-1, 1, 0], [1, 0, 1], [-1, 0, -1],
         [1, 0, -1], [-1, 0, 1], [0, 1, 1], [0, -1, -1], [0, 1, -1], [0, -1, 1]]
    )
    cs2 = 1.0 / 3.0
    nx, ny, nz = flags.shape
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                if not (flags[i, j, k] & mask):
                    continue
                usq = u[0] * u[0] + u[1] * u[1] + u[2] * u[2]
                for q in range(19):
                    wq = 1.0 / 3.0 if q == 0 else (1.0 / 18.0 if q < 7 else 1.0 / 36.0)
                    cu = c[q, 0] * u[0] + c[q, 1] * u[1] + c[q, 2] * u[2]
                    pdf[i, j, k, q] = wq * (rho - usq / (2 * cs2) + cu * cu / (2 * cs2 * cs2)) + wq * cu / cs2


_NO_FIELD = np.zeros((0, 0, 0, 3))


class PdfField:
    """Source/destination population storage on a block-structured lattice."""

    def __init__(self, domain):
        if domain.ghost_width != 1:
            raise ConfigurationError("the fused kernel expects exactly one ghost layer")
        self.domain = domain
        self.src = Field(domain, (Q,))
        self.dst = Field(domain, (Q,))
        for f in (self.src, self.dst):
            f.fill(0.0)
            for a in f.blocks:
                a[...] = WEIGHTS

    def swap(self):
        self.src, self.dst = self.dst, self.src

    def set_equilibrium(self, flags, mask, rho=1.0, u=(0.0, 0.0, 0.0)):
        u = np.asarray(u, dtype=float)
        for bid in range(self.domain.n_blocks):
            set_equilibrium_kernel(self.src[bid], flags[bid], np.uint8(mask), float(rho), u)
            self.dst[bid][...] = self.src[bid]

    def stream_collide(self, workers, flags, params, force=(0.0, 0.0, 0.0), force_field=None, step=None):
        """One fused update from ``src`` into ``dst`` on every block, then swap."""
        force = np.asarray(force, dtype=float)
        lam_e, lam_o = params.lambda_e, params.lambda_o

        def sweep(bid):
            ff = _NO_FIELD if force_field is None else force_field[bid]
            return stream_collide_kernel(
                self.src[bid], self.dst[bid], flags[bid], lam_e, lam_o, force, ff, FLUID
            )

        results = workers.map(sweep)
        for bid, bad in enumerate(results):
            if bad[0] >= 0:
                off = self.domain.block_offset(bid)
                g = self.domain.ghost_width
                cell = tuple(off[a] + bad[a] - g for a in range(3))
                raise NumericDivergenceError("non-finite populations", cell, step)
        self.swap()

    def moments(self, flags, force=(0.0, 0.0, 0.0)):
        """Per-block density and velocity arrays of the current state."""
        force = np.asarray(force, dtype=float)
        rho = Field(self.domain)
        u = Field(self.domain, (3,))
        for bid in range(self.domain.n_blocks):
            moments_kernel(self.src[bid], flags[bid], force, FLUID, rho[bid], u[bid])
        return rho, u
