"""Small setups shared by several test modules."""

import numpy as np

from lbmcharge.boundaries import BoundaryCondition, LbmBoundaries, Patch
from lbmcharge.electrostatics import POISSON, PotentialBoundaries, PotentialPatch, StencilField, assemble_stencils
from lbmcharge.grid import FLUID, Domain, Field, FlagField, Workers, exchange_ghosts
from lbmcharge.lbm import PdfField
from lbmcharge.multigrid import galerkin_coarsen


def fluid_flags(domain):
    flags = FlagField(domain)
    for b in range(domain.n_blocks):
        flags.interior(b)[...] = FLUID
    return flags


def run_periodic(pdfs, flags, params, force, steps, workers=None):
    w = workers or Workers.serial(pdfs.domain)
    for s in range(steps):
        exchange_ghosts(pdfs.src, "d3q19")
        pdfs.stream_collide(w, flags, params, force, step=s)


def poiseuille(params, n=16, g=1e-6, steps=6000):
    """Body-force driven flow along x between no-slip walls at z = 0 and z = n."""
    d = Domain((1, 1, n), periodicity=(True, True, False))
    bc = LbmBoundaries(d, [Patch("z-", BoundaryCondition("noslip")),
                           Patch("z+", BoundaryCondition("noslip"))])
    flags = bc.refresh()
    pdfs = PdfField(d)
    w = Workers.serial(d)
    force = np.array([g, 0.0, 0.0])
    for s in range(steps):
        exchange_ghosts(pdfs.src, "d3q19")
        bc.apply(pdfs, w)
        pdfs.stream_collide(w, flags, params, force, step=s)
    _, u = pdfs.moments(flags, force)
    return u.gather()[0, 0, :, 0]


def run_bounded(pdfs, bc, flags, params, force, steps, workers=None):
    w = workers or Workers.serial(pdfs.domain)
    for s in range(steps):
        exchange_ghosts(pdfs.src, "d3q19")
        bc.apply(pdfs, w)
        pdfs.stream_collide(w, flags, params, force, step=s)


def perturb(pdfs, seed, amplitude=0.01):
    rng = np.random.default_rng(seed)
    for b in range(pdfs.domain.n_blocks):
        pdfs.src[b][...] *= 1 + amplitude * rng.standard_normal(pdfs.src[b].shape)
    return pdfs


def interior_total(pdfs, flags):
    import math

    vals = []
    for b in range(pdfs.domain.n_blocks):
        fl = flags.interior(b)
        vals.append(pdfs.src.interior(b)[(fl & FLUID) != 0].ravel())
    return math.fsum(np.concatenate(vals))


FACES = ("x-", "x+", "y-", "y+", "z-", "z+")
OFFSETS = ((0, 0, 0), (-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


def cells(domain):
    nx, ny, nz = domain.global_cells
    return [(i, j, k) for k in range(nz) for j in range(ny) for i in range(nx)]


def lin(domain, c):
    nx, ny, _ = domain.global_cells
    return c[0] + nx * (c[1] + ny * c[2])


def dense(stencils):
    """Matrix of a stencil field, assembled cell by cell from ``stencil(cell)``."""
    d = stencils.domain
    A = np.zeros((d.n_cells, d.n_cells))
    for c in cells(d):
        s = stencils.stencil(c)
        for q, o in enumerate(OFFSETS):
            if s[q] == 0.0:
                continue
            nb = [c[a] + o[a] for a in range(3)]
            for a in range(3):
                if d.periodicity[a]:
                    nb[a] %= d.global_cells[a]
            A[lin(d, c), lin(d, nb)] += s[q]
    return A


def transfers(domain):
    """Averaging restriction and injection prolongation, built from the cell map."""
    coarse = domain.coarsened()
    P = np.zeros((domain.n_cells, coarse.n_cells))
    for c in cells(domain):
        P[lin(domain, c), lin(coarse, tuple(x // 2 for x in c))] = 1.0
    return P.T / 8.0, P


def private_field(domain, rows):
    """Stencil field with one private row per cell, ``rows`` indexed by global cell."""
    table = np.vstack([POISSON[None, :], rows.reshape(-1, 7)])
    index = Field(domain, (), np.int32, 0)
    ids = np.arange(1, domain.n_cells + 1).reshape(domain.global_cells, order="F")
    index.scatter(ids)
    return StencilField(domain, table, index)


def random_symmetric(domain, seed):
    """Diagonally dominant symmetric 7-point rows; no coupling across physical walls."""
    rng = np.random.default_rng(seed)
    n = domain.global_cells
    rows = np.zeros(n + (7,), order="F")
    for a in range(3):
        w = -rng.uniform(0.2, 2.0, n)
        if not domain.periodicity[a]:
            sl = [slice(None)] * 3
            sl[a] = -1
            w[tuple(sl)] = 0.0
        rows[..., 2 + 2 * a] = w
        rows[..., 1 + 2 * a] = np.roll(w, 1, axis=a)
    rows[..., 0] = -rows[..., 1:].sum(-1) + rng.uniform(0.1, 1.0, n)
    return private_field(domain, rows.reshape(-1, 7, order="F"))


def folded_poisson(n, blocks=None, kinds=("dirichlet",) * 6):
    d = Domain((n,) * 3, blocks or (n,) * 3)
    pb = PotentialBoundaries(d, [PotentialPatch(f, k) for f, k in zip(FACES, kinds)])
    return assemble_stencils(d, pb)[0]


def assert_galerkin(fine, atol=1e-13):
    coarse = galerkin_coarsen(fine, fine.domain.coarsened())
    R, P = transfers(fine.domain)
    expected = R @ dense(fine) @ P
    got = dense(coarse)
    assert np.abs(got - expected).max() <= atol * max(1.0, np.abs(expected).max())
    return coarse
