import math

import numpy as np
import pytest

from lbmcharge.boundaries import BoundaryCondition, LbmBoundaries, Obstacle, Patch, face_coverage
from lbmcharge.errors import ConfigurationError
from lbmcharge.grid import Domain, NEAR_BC, NON_BC
from lbmcharge.lbm import MAGIC_MID, VELOCITIES, PdfField, TrtParams

from helpers import interior_total, perturb, poiseuille, run_bounded

WALLS = ("x-", "x+", "y-", "y+", "z-", "z+")


def _box(kind="noslip", cells=(8, 8, 8), blocks=None, **kw):
    d = Domain(cells, blocks)
    bc = LbmBoundaries(d, [Patch(f, BoundaryCondition(kind, **kw)) for f in WALLS])
    return d, bc


def test_missing_face_is_a_setup_error():
    d = Domain((4, 4, 4))
    with pytest.raises(ConfigurationError, match="no boundary condition"):
        LbmBoundaries(d, [Patch(f, BoundaryCondition()) for f in WALLS[:-1]])


def test_overlapping_patches_rejected():
    d = Domain((4, 4, 4), periodicity=(True, True, False))
    patches = [Patch("z-", BoundaryCondition()), Patch("z-", BoundaryCondition(), (0, 0), (2, 2)),
               Patch("z+", BoundaryCondition())]
    with pytest.raises(ConfigurationError, match="overlapping"):
        face_coverage(d, patches)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigurationError):
        BoundaryCondition("sticky")


def test_near_boundary_flags():
    d, bc = _box(cells=(4, 4, 4))
    f = bc.flags.interior(0)
    assert f[0, 1, 1] == NEAR_BC
    assert f[1, 1, 1] == NON_BC
    assert bc.flags.count(NEAR_BC) == 64 - 8


def test_resting_velocity_wall_equals_noslip():
    results = []
    for kind in ("noslip", "velocity"):
        d, bc = _box(kind)
        pdfs = perturb(PdfField(d), 11)
        run_bounded(pdfs, bc, bc.flags, TrtParams(0.9), (0, 0, 0), 20)
        results.append(pdfs.src[0].copy())
    interior = (slice(1, -1),) * 3
    assert np.array_equal(results[0][interior], results[1][interior])


def test_closed_box_conserves_mass():
    d, bc = _box(cells=(8, 8, 8), blocks=(4, 4, 4))
    pdfs = perturb(PdfField(d), 2)
    m0 = interior_total(pdfs, bc.flags)
    run_bounded(pdfs, bc, bc.flags, TrtParams(0.7), (0, 0, 0), 1000)
    assert abs(interior_total(pdfs, bc.flags) - m0) / m0 < 1e-13


def test_poiseuille_walls_sit_midway():
    n = 16
    u = poiseuille(TrtParams(1.2, MAGIC_MID), n=n)
    z = np.arange(n) + 0.5
    coef = np.polyfit(z, u, 2)
    fit = np.polyval(coef, z)
    assert np.abs(fit - u).max() < 1e-6 * u.max()
    roots = np.sort(np.roots(coef).real)
    np.testing.assert_allclose(roots, [0.0, n], atol=1e-6)


def test_freeslip_exerts_no_tangential_force():
    d = Domain((4, 4, 6), periodicity=(True, True, False))
    slip = BoundaryCondition("freeslip")
    bc = LbmBoundaries(d, [Patch("z-", slip), Patch("z+", slip)])
    pdfs = PdfField(d)
    pdfs.set_equilibrium(bc.flags, NON_BC | NEAR_BC, 1.0, (0.01, 0.005, 0.0))

    def momentum():
        f = pdfs.src.interior(0).reshape(-1, 19)
        return np.array([math.fsum((f * VELOCITIES[:, a]).ravel()) for a in range(3)])

    p0 = momentum()
    run_bounded(pdfs, bc, bc.flags, TrtParams(0.8), (0, 0, 0), 50)
    np.testing.assert_allclose(momentum()[:2], p0[:2], rtol=1e-13)


def test_inflow_matches_outflow():
    # the mean pressure mode decays viscously, so a short channel and a
    # large viscosity reach steady state quickly
    d = Domain((4, 12, 4), periodicity=(True, False, True))
    bc = LbmBoundaries(d, [
        Patch("y-", BoundaryCondition("velocity", (0.0, 1e-3, 0.0))),
        Patch("y+", BoundaryCondition("pressure", density=1.0)),
    ])
    pdfs = PdfField(d)
    run_bounded(pdfs, bc, bc.flags, TrtParams(2.0), (0, 0, 0), 4000)
    _, u = pdfs.moments(bc.flags)
    flux = u.gather()[:, :, :, 1].sum(axis=(0, 2))
    assert abs(flux[-1] - flux[0]) / flux[0] < 1e-6
    assert flux[0] == pytest.approx(16e-3, rel=1e-2)


def test_static_obstacle_is_boundary():
    d = Domain((8, 8, 8), periodicity=(True,) * 3)
    bc = LbmBoundaries(d, obstacles=[Obstacle((2, 2, 2), (4, 4, 4))])
    f = bc.flags.interior(0)
    assert not f[3, 3, 3] & (NON_BC | NEAR_BC)
    assert f[1, 3, 3] == NEAR_BC
