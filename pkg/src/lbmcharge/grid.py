"""Block-structured uniform Cartesian lattice.

The global domain is split into equally sized blocks. Every block stores its
own arrays with a ghost layer of ``ghost_width`` cells around the interior.
Arrays are allocated in Fortran order and indexed ``[x, y, z, ...]`` so the
linear layout is x-fastest; a trailing payload axis (19 populations, 3 vector
components, 7 stencil entries) is the slowest index.

Blocks are the unit of parallelism. A :class:`Workers` pool runs per-block
sweeps on threads (all heavy kernels release the GIL); ghost exchange is the
only data motion between blocks.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

AXES = "xyz"

# Exchange patterns: offsets of the neighbour blocks whose data is copied.
FACES = tuple(
    d for d in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, d)) == 1
)
D3Q19 = tuple(
    d for d in itertools.product((-1, 0, 1), repeat=3) if 1 <= sum(map(abs, d)) <= 2
)
FULL = tuple(d for d in itertools.product((-1, 0, 1), repeat=3) if any(d))
PATTERNS = {"faces": FACES, "d3q19": D3Q19, "full": FULL}

# Domain-state flags common to every governing equation. Boundary kinds use
# the remaining bits and are defined by the module owning the equation.
NON_BC = np.uint8(1 << 0)
NEAR_BC = np.uint8(1 << 1)
FLUID = np.uint8(NON_BC | NEAR_BC)


def _triple(value, name, kind=int):
    if np.isscalar(value):
        value = (value,) * 3
    value = tuple(kind(v) for v in value)
    if len(value) != 3:
        raise ConfigurationError(f"{name} needs three components, got {value}")
    return value


@dataclass(frozen=True)
class Domain:
    """Global lattice extent and its split into equally sized blocks."""

    global_cells: tuple
    block_cells: tuple = None
    periodicity: tuple = (False, False, False)
    ghost_width: int = 1

    def __post_init__(self):
        cells = _triple(self.global_cells, "global_cells")
        block = cells if self.block_cells is None else _triple(self.block_cells, "block_cells")
        periodic = _triple(self.periodicity, "periodicity", bool)
        object.__setattr__(self, "global_cells", cells)
        object.__setattr__(self, "block_cells", block)
        object.__setattr__(self, "periodicity", periodic)
        if self.ghost_width < 1:
            raise ConfigurationError("ghost_width must be at least 1")
        for a in range(3):
            if cells[a] <= 0 or block[a] <= 0:
                raise ConfigurationError(f"axis {AXES[a]}: cell counts must be positive")
            if cells[a] % block[a]:
                raise ConfigurationError(
                    f"axis {AXES[a]}: {cells[a]} cells not divisible by block size {block[a]}"
                )

    @property
    def blocks(self):
        return tuple(c // b for c, b in zip(self.global_cells, self.block_cells))

    @property
    def n_blocks(self):
        bx, by, bz = self.blocks
        return bx * by * bz

    @property
    def n_cells(self):
        nx, ny, nz = self.global_cells
        return nx * ny * nz

    @property
    def padded_shape(self):
        g = self.ghost_width
        return tuple(n + 2 * g for n in self.block_cells)

    def block_coords(self, bid):
        bx, by, _ = self.blocks
        return (bid % bx, (bid // bx) % by, bid // (bx * by))

    def block_id(self, coords):
        bx, by, _ = self.blocks
        return coords[0] + bx * (coords[1] + by * coords[2])

    def block_offset(self, bid):
        """Global index of the first interior cell of block ``bid``."""
        c = self.block_coords(bid)
        return tuple(c[a] * self.block_cells[a] for a in range(3))

    def linear_index(self, i, j, k):
        nx, ny, _ = self.global_cells
        return i + nx * (j + ny * k)

    def neighbour(self, bid, offset):
        """Block id across ``offset`` (wrapping periodic axes) or None."""
        c = list(self.block_coords(bid))
        for a in range(3):
            c[a] += offset[a]
            if 0 <= c[a] < self.blocks[a]:
                continue
            if not self.periodicity[a]:
                return None
            c[a] %= self.blocks[a]
        return self.block_id(c)

    def can_coarsen(self):
        return all(b % 2 == 0 and b >= 4 for b in self.block_cells)

    def coarsened(self):
        if not self.can_coarsen():
            raise ConfigurationError(f"block {self.block_cells} cannot be coarsened")
        return Domain(
            tuple(n // 2 for n in self.global_cells),
            tuple(n // 2 for n in self.block_cells),
            self.periodicity,
            self.ghost_width,
        )


@dataclass(frozen=True)
class BlockAssignment:
    domain: Domain
    workers: int
    worker_grid: tuple
    owner: tuple

    def blocks_of(self, worker):
        return [b for b, w in enumerate(self.owner) if w == worker]


def _prime_factors(n):
    out, p = [], 2
    while n > 1:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    return sorted(out, reverse=True)


def decompose(domain, workers):
    """Assign every block to one of ``workers`` on a 3-D worker grid.

    Prime factors of ``workers`` are placed greedily on the axis with the most
    remaining blocks that can absorb them, so the result is deterministic.
    """
    if workers < 1:
        raise ConfigurationError("need at least one worker")
    remaining = list(domain.blocks)
    grid = [1, 1, 1]
    for p in _prime_factors(workers):
        order = sorted(range(3), key=lambda a: (-remaining[a], a))
        for a in order:
            if remaining[a] % p == 0:
                remaining[a] //= p
                grid[a] *= p
                break
        else:
            a = order[0]
            raise ConfigurationError(
                f"axis {AXES[a]}: {domain.blocks[a]} blocks cannot absorb worker factor {p}"
                f" ({domain.n_blocks} blocks, {workers} workers)"
            )
    per = [domain.blocks[a] // grid[a] for a in range(3)]
    owner = []
    for bid in range(domain.n_blocks):
        c = domain.block_coords(bid)
        w = [c[a] // per[a] for a in range(3)]
        owner.append(w[0] + grid[0] * (w[1] + grid[1] * w[2]))
    return BlockAssignment(domain, workers, tuple(grid), tuple(owner))


class Workers:
    """Runs per-block sweeps, one thread per worker.

    Results always come back in ascending block order, independent of the
    number of workers.
    """

    def __init__(self, assignment):
        self.assignment = assignment
        self.n = assignment.workers
        self._groups = [assignment.blocks_of(w) for w in range(self.n)]
        self._pool = ThreadPoolExecutor(self.n) if self.n > 1 else None

    @classmethod
    def serial(cls, domain):
        return cls(decompose(domain, 1))

    def map(self, fn, blocks=None):
        n_blocks = self.assignment.domain.n_blocks
        if self._pool is None:
            ids = range(n_blocks) if blocks is None else blocks
            return [fn(b) for b in ids]
        wanted = None if blocks is None else set(blocks)
        results = {}

        def run(group):
            for b in group:
                if wanted is None or b in wanted:
                    results[b] = fn(b)

        futures = [self._pool.submit(run, g) for g in self._groups]
        for f in futures:
            f.result()
        return [results[b] for b in sorted(results)]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def ordered_sum(values):
    """Sum per-block partial results in ascending block order."""
    total = None
    for v in values:
        total = v if total is None else total + v
    return 0.0 if total is None else total


@dataclass
class Field:
    """Cell-centered data on every block, padded by the ghost layer."""

    domain: Domain
    payload: tuple = ()
    dtype: type = np.float64
    fill_value: float = 0.0
    blocks: list = field(init=False)

    def __post_init__(self):
        shape = self.domain.padded_shape + tuple(self.payload)
        self.blocks = [
            np.full(shape, self.fill_value, dtype=self.dtype, order="F")
            for _ in range(self.domain.n_blocks)
        ]

    def __getitem__(self, bid):
        return self.blocks[bid]

    def __len__(self):
        return len(self.blocks)

    def interior(self, bid):
        g = self.domain.ghost_width
        n = self.domain.block_cells
        return self.blocks[bid][g : g + n[0], g : g + n[1], g : g + n[2]]

    def fill(self, value):
        for a in self.blocks:
            a[...] = value

    def copy(self):
        other = Field.__new__(Field)
        other.domain, other.payload, other.dtype = self.domain, self.payload, self.dtype
        other.fill_value = self.fill_value
        other.blocks = [a.copy(order="F") for a in self.blocks]
        return other

    def gather(self):
        """Assemble the interior of all blocks into one global array."""
        out = np.empty(self.domain.global_cells + tuple(self.payload), dtype=self.dtype, order="F")
        n = self.domain.block_cells
        for bid in range(len(self.blocks)):
            o = self.domain.block_offset(bid)
            out[o[0] : o[0] + n[0], o[1] : o[1] + n[1], o[2] : o[2] + n[2]] = self.interior(bid)
        return out

    def scatter(self, values):
        values = np.asarray(values)
        n = self.domain.block_cells
        for bid in range(len(self.blocks)):
            o = self.domain.block_offset(bid)
            self.interior(bid)[...] = values[o[0] : o[0] + n[0], o[1] : o[1] + n[1], o[2] : o[2] + n[2]]


class FlagField(Field):
    """Per-cell uint8 bitmask for one governing equation."""

    def __init__(self, domain):
        super().__init__(domain, (), np.uint8, 0)

    def count(self, mask, interior_only=True):
        total = 0
        for bid in range(len(self.blocks)):
            a = self.interior(bid) if interior_only else self.blocks[bid]
            total += int(np.count_nonzero(a & mask))
        return total


def _ghost_slices(n, g, d):
    if d < 0:
        return slice(0, g)
    if d > 0:
        return slice(n + g, n + 2 * g)
    return slice(g, n + g)


def _source_slices(n, g, d):
    if d < 0:
        return slice(n, n + g)
    if d > 0:
        return slice(g, 2 * g)
    return slice(g, n + g)


_copy_plans = {}


def exchange_plan(domain, pattern="d3q19"):
    """List of ``(dst_block, dst_slices, src_block, src_slices)`` copies."""
    key = (domain, pattern)
    plan = _copy_plans.get(key)
    if plan is None:
        offsets = PATTERNS[pattern]
        g, n = domain.ghost_width, domain.block_cells
        plan = []
        for bid in range(domain.n_blocks):
            for d in offsets:
                src = domain.neighbour(bid, d)
                if src is None:
                    continue
                dst_sl = tuple(_ghost_slices(n[a], g, d[a]) for a in range(3))
                src_sl = tuple(_source_slices(n[a], g, d[a]) for a in range(3))
                plan.append((bid, dst_sl, src, src_sl))
        _copy_plans[key] = plan
    return plan


def exchange_ghosts(field, pattern="d3q19"):
    """Copy neighbour interiors into ghost layers.

    Periodic axes wrap; ghosts on non-periodic physical boundaries are left
    untouched. Sources are always interior cells, so the copy order is
    irrelevant and the operation is idempotent.
    """
    blocks = field.blocks if isinstance(field, Field) else field
    for dst, dsl, src, ssl in exchange_plan(field.domain, pattern):
        blocks[dst][dsl] = blocks[src][ssl]
    return field


def cell_centers(domain, bid, dx=1.0, ghosts=True):
    """Global cell-center coordinates of a block along each axis."""
    g = domain.ghost_width if ghosts else 0
    o = domain.block_offset(bid)
    n = domain.block_cells
    return tuple((np.arange(o[a] - g, o[a] + n[a] + g) + 0.5) * dx for a in range(3))
