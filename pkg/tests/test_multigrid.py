import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmcharge.electrostatics import (
    POISSON, PotentialBoundaries, PotentialPatch, StencilField, adapt_rhs, assemble_stencils,
)
from lbmcharge.errors import ConfigurationError, SingularOperatorError, SolverError
from lbmcharge.grid import Domain, Field
from lbmcharge.multigrid import MgConfig, MultigridSolver, coarsen_row, galerkin_coarsen

from helpers import (
    FACES, assert_galerkin, cells, dense, folded_poisson, lin, private_field, random_symmetric, transfers,
)


def test_uniform_periodic_stencil_coarsens_to_uniform():
    d = Domain((8, 8, 8), (8, 8, 8), (True, True, True))
    fine = StencilField(d, POISSON[None, :], Field(d, (), np.int32, 0))
    coarse = assert_galerkin(fine)
    assert coarse.n_private == 0
    assert coarse.shared.tolist() == [3.0, -0.5, -0.5, -0.5, -0.5, -0.5, -0.5]
    assert coarsen_row(POISSON).tolist() == coarse.shared.tolist()


def test_folded_poisson_galerkin_8():
    assert_galerkin(folded_poisson(8, (4, 4, 4)))


def test_mixed_bc_galerkin_16():
    fine = folded_poisson(16, (8, 8, 8), ("dirichlet", "neumann") * 3)
    assert_galerkin(fine)


def test_identity_coarsens_to_identity():
    d = Domain((8, 8, 8), (4, 4, 4))
    ident = np.array([[1.0, 0, 0, 0, 0, 0, 0]])
    coarse = galerkin_coarsen(StencilField(d, ident, Field(d, (), np.int32, 0)), d.coarsened())
    assert np.array_equal(dense(coarse), np.eye(d.coarsened().n_cells))


@pytest.mark.parametrize("periodic", [True, False])
def test_random_symmetric_field_galerkin(periodic):
    d = Domain((4, 4, 4), (4, 4, 4), (periodic,) * 3)
    fine = random_symmetric(d, 3)
    A = dense(fine)
    assert np.allclose(A, A.T, rtol=0, atol=0)
    coarse = assert_galerkin(fine)
    C = dense(coarse)
    assert np.abs(C - C.T).max() <= 1e-15


def test_random_field_galerkin_16_blocks():
    d = Domain((16, 16, 16), (8, 8, 8))
    assert_galerkin(random_symmetric(d, 11))


def test_hierarchy_levels_are_triple_products():
    fine = folded_poisson(16, (8, 8, 8), ("neumann", "dirichlet", "neumann", "neumann", "dirichlet", "neumann"))
    mg = MultigridSolver(fine)
    assert [lv.domain.global_cells for lv in mg.levels] == [(16,) * 3, (8,) * 3, (4,) * 3]
    for upper, lower in zip(mg.levels, mg.levels[1:]):
        R, P = transfers(upper.domain)
        assert np.allclose(dense(lower.stencils), R @ dense(upper.stencils) @ P, rtol=0, atol=1e-13)


def test_hierarchy_stops_at_max_levels_and_odd_blocks():
    assert len(MultigridSolver(folded_poisson(16, (8, 8, 8)), MgConfig(max_levels=2)).levels) == 2
    assert len(MultigridSolver(folded_poisson(12, (6, 6, 6))).levels) == 2
    assert len(MultigridSolver(folded_poisson(10, (5, 5, 5))).levels) == 1


# smoother ---------------------------------------------------------------------


def integer_problem(seed=0):
    d = Domain((8, 8, 8), (4, 4, 4))
    st_ = folded_poisson(8, (4, 4, 4))
    phi = np.random.default_rng(seed).integers(-50, 50, d.global_cells).astype(float)
    return st_, phi, dense(st_) @ phi.ravel(order="F")


def test_exact_solution_is_a_smoother_fixed_point():
    st_, phi, b = integer_problem()
    mg = MultigridSolver(st_, MgConfig(max_levels=1))
    mg.phi.scatter(phi)
    mg.rhs.scatter(b.reshape(phi.shape, order="F"))
    mg.smooth(0, 2)
    assert np.abs(mg.phi.gather() - phi).max() <= 1e-15 * np.abs(phi).max()
    assert mg.residual(0) == 0.0


def test_single_cell_solved_in_one_sweep():
    st_ = folded_poisson(1)
    mg = MultigridSolver(st_)
    assert len(mg.levels) == 1
    assert st_.stencil((0, 0, 0)).tolist() == [12, 0, 0, 0, 0, 0, 0]
    mg.rhs.scatter(np.full((1, 1, 1), 3.0))
    mg.smooth(0, 1)
    assert mg.phi.gather()[0, 0, 0] == 3.0 / 12.0


def test_red_black_sweep_matches_dense_gauss_seidel():
    st_, _, b = integer_problem(1)
    d = st_.domain
    A = dense(st_)
    x = np.zeros(d.n_cells)
    for colour in (0, 1):
        for c in cells(d):
            if sum(c) % 2 == colour:
                r = lin(d, c)
                x[r] = (b[r] - A[r] @ x + A[r, r] * x[r]) / A[r, r]
    mg = MultigridSolver(st_, MgConfig(max_levels=1))
    mg.rhs.scatter(b.reshape(d.global_cells, order="F"))
    mg.smooth(0, 1)
    assert np.allclose(mg.phi.gather().ravel(order="F"), x, rtol=1e-14, atol=1e-12)


def test_smoothing_damps_high_frequencies():
    d = Domain((32, 32, 32), (16, 16, 16), (True, True, True))
    mg = MultigridSolver(StencilField(d, POISSON[None, :], Field(d, (), np.int32, 0)),
                         MgConfig(max_levels=1), singular=True)
    rng = np.random.default_rng(5)
    x = np.arange(32)
    checker = (-1.0) ** (x[:, None, None] + x[None, :, None] + x[None, None, :])
    mg.phi.scatter(checker + 0.5 * rng.standard_normal((32, 32, 32)))
    res = [mg.residual(0)]
    for _ in range(3):
        mg.smooth(0, 1)
        res.append(mg.residual(0))
    assert all(b <= 0.5 * a for a, b in zip(res, res[1:]))


def test_zero_centre_is_reported_with_cell():
    d = Domain((4, 4, 4))
    rows = np.tile(POISSON, (64, 1))
    rows[lin(d, (1, 2, 3)), 0] = 0.0
    with pytest.raises(SingularOperatorError) as err:
        MultigridSolver(private_field(d, rows))
    assert "(1, 2, 3)" in str(err.value)


# transfers --------------------------------------------------------------------


def two_level(n=8, alpha=2.0):
    st_ = folded_poisson(n, (n // 2,) * 3)
    return MultigridSolver(st_, MgConfig(max_levels=2, correction_factor=alpha))


def test_restriction_of_constant():
    mg = two_level()
    mg.levels[0].residual.scatter(np.full((8, 8, 8), 2.5))
    mg.restrict(0)
    assert np.all(mg.levels[1].rhs.gather() == 2.5)


def test_restriction_is_child_mean():
    mg = two_level()
    r = np.zeros((8, 8, 8))
    r[2:4, 4:6, 0:2] = np.arange(1.0, 9.0).reshape(2, 2, 2)
    mg.levels[0].residual.scatter(r)
    mg.restrict(0)
    assert mg.levels[1].rhs.gather()[1, 2, 0] == 4.5


def test_restriction_of_linear_field_is_coarse_centre_value():
    mg = two_level()
    x = np.arange(8) + 0.5
    f = 1.0 + 0.5 * x[:, None, None] - 2.0 * x[None, :, None] + 0.25 * x[None, None, :]
    mg.levels[0].residual.scatter(f)
    mg.restrict(0)
    xc = 2 * (np.arange(4) + 0.5)
    exact = 1.0 + 0.5 * xc[:, None, None] - 2.0 * xc[None, :, None] + 0.25 * xc[None, None, :]
    assert np.allclose(mg.levels[1].rhs.gather(), exact, rtol=0, atol=1e-14)


@pytest.mark.parametrize("alpha,parent,inc", [(1.0, 0.0, 0.0), (1.0, 0.7, 0.7), (2.0, 0.5, 1.0)])
def test_prolongation_increments_children(alpha, parent, inc):
    mg = two_level(alpha=alpha)
    base = np.random.default_rng(0).standard_normal((8, 8, 8))
    mg.phi.scatter(base)
    c = np.zeros((4, 4, 4))
    c[1, 2, 3] = parent
    mg.levels[1].phi.scatter(c)
    mg.prolongate(0)
    diff = mg.phi.gather() - base
    assert np.allclose(diff[2:4, 4:6, 6:8], inc, rtol=0, atol=1e-15)
    diff[2:4, 4:6, 6:8] = 0.0
    assert not diff.any()


# coarse solver ----------------------------------------------------------------


def test_coarse_solve_with_zero_rhs():
    mg = MultigridSolver(folded_poisson(4), MgConfig(max_levels=1))
    assert mg.coarse_solve() == 0
    assert not mg.phi.gather().any()


def test_cg_terminates_on_two_cell_system():
    d = Domain((2, 1, 1), periodicity=(False, True, True))
    st_ = assemble_stencils(d, PotentialBoundaries(d, [PotentialPatch("x-", "dirichlet"),
                                                       PotentialPatch("x+", "dirichlet")]))[0]
    A = dense(st_)
    assert A.tolist() == [[3.0, -1.0], [-1.0, 3.0]]
    mg = MultigridSolver(st_, MgConfig(coarse_tolerance=1e-15))
    b = np.array([1.0, -3.0])
    mg.rhs.scatter(b.reshape(2, 1, 1))
    assert mg.coarse_solve() <= 2
    assert np.allclose(mg.phi.gather().ravel(), np.linalg.solve(A, b), rtol=1e-14)


def test_fixed_coarse_iterations():
    mg = MultigridSolver(folded_poisson(8), MgConfig(max_levels=1, coarse_mode="fixed", coarse_iterations=5))
    mg.rhs.scatter(np.random.default_rng(1).standard_normal((8, 8, 8)))
    assert mg.coarse_solve() == 5


def test_cg_breakdown_on_indefinite_operator():
    d = Domain((4, 4, 4))
    rows = np.tile(-POISSON, (64, 1))
    mg = MultigridSolver(private_field(d, rows), MgConfig(max_levels=1))
    mg.rhs.scatter(np.ones((4, 4, 4)))
    with pytest.raises(SolverError, match="boundary"):
        mg.coarse_solve()


def test_fixed_budget_on_blocked_coarse_grid():
    # blocks 4 x 2 x 8 with 2^3 coarsest cells each, 12 coarse CG iterations
    blocks = (8, 8, 8)
    d = Domain((32, 16, 64), blocks)
    kinds = {"z-": "dirichlet", "z+": "dirichlet"}
    pb = PotentialBoundaries(d, [PotentialPatch(f, kinds.get(f, "neumann"), -1.0 if f == "z-" else 0.0)
                                 for f in FACES])
    st_, rhs_bc, _ = assemble_stencils(d, pb)
    rng = np.random.default_rng(2)
    f = rng.standard_normal(d.global_cells) * 1e-3
    out = []
    for cfg in (MgConfig(coarse_mode="fixed", coarse_iterations=12), MgConfig(coarse_tolerance=1e-12)):
        mg = MultigridSolver(st_, cfg)
        assert mg.levels[-1].domain.global_cells == (8, 4, 16)
        rhs = Field(d)
        rhs.scatter(f)
        adapt_rhs(rhs, rhs_bc)
        for b in range(d.n_blocks):
            mg.rhs[b][...] = rhs[b]
        out.append([mg.v_cycle() for _ in range(6)])
    fixed, accurate = out
    assert all(b < 0.3 * a for a, b in zip(fixed, fixed[1:]))
    assert all(b < 0.3 * a for a, b in zip(accurate, accurate[1:]))


# V-cycle ----------------------------------------------------------------------


def test_zero_problem_stays_zero():
    mg = MultigridSolver(folded_poisson(8, (4, 4, 4)))
    cycles, res = mg.solve(max_cycles=3, tolerance=-1.0)
    assert res == 0.0 and cycles == 3
    assert not mg.phi.gather().any()


def test_solve_contract():
    mg = MultigridSolver(folded_poisson(16, (8, 8, 8)), MgConfig(tolerance=1e-10))
    mg.rhs.scatter(np.random.default_rng(4).standard_normal((16, 16, 16)))
    cycles, res = mg.solve()
    assert res < 1e-10 and 0 < cycles < 15
    assert mg.history[-1] == res and len(mg.history) == cycles + 1
    assert all(b < a for a, b in zip(mg.history, mg.history[1:]))
    # a converged start costs no cycle
    assert mg.solve() == (0, res)
    A = dense(mg.levels[0].stencils)
    exact = np.linalg.solve(A, mg.rhs.gather().ravel(order="F"))
    assert np.allclose(mg.phi.gather().ravel(order="F"), exact, atol=1e-10)


def test_solve_respects_cycle_cap():
    mg = MultigridSolver(folded_poisson(16, (8, 8, 8)))
    mg.rhs.scatter(np.random.default_rng(4).standard_normal((16, 16, 16)))
    cycles, res = mg.solve(max_cycles=2, tolerance=0.0)
    assert cycles == 2 and res > 0.0


def test_pure_neumann_problem_is_mean_normalised():
    st_ = folded_poisson(8, (4, 4, 4), ("neumann",) * 6)
    mg = MultigridSolver(st_, MgConfig(tolerance=1e-11), singular=True)
    f = np.random.default_rng(6).standard_normal((8, 8, 8))
    f -= f.mean()
    mg.rhs.scatter(f)
    cycles, res = mg.solve()
    assert res < 1e-11
    assert abs(mg.phi.gather().mean()) < 1e-12


def test_divergence_is_reported():
    st_ = folded_poisson(8, (4, 4, 4))
    mg = MultigridSolver(st_, MgConfig(correction_factor=100.0))
    mg.rhs.scatter(np.random.default_rng(0).standard_normal((8, 8, 8)))
    with pytest.raises(SolverError, match="diverged"):
        mg.solve(max_cycles=20, tolerance=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.floats(0.5, 3.0), st.sampled_from(["relative", "fixed"]),
       st.integers(0, 20))
def test_config_invariants(pre, post, alpha, mode, iters):
    valid = pre + post >= 2 and (mode == "relative" or iters > 0)
    if valid:
        cfg = MgConfig(pre_smoothing=pre, post_smoothing=post, correction_factor=alpha,
                       coarse_mode=mode, coarse_iterations=iters)
        assert cfg.pre_smoothing + cfg.post_smoothing >= 2
    else:
        with pytest.raises(ConfigurationError):
            MgConfig(pre_smoothing=pre, post_smoothing=post, correction_factor=alpha,
                     coarse_mode=mode, coarse_iterations=iters)


def test_unknown_coarse_mode_rejected():
    with pytest.raises(ConfigurationError):
        MgConfig(coarse_mode="direct")
    with pytest.raises(ConfigurationError):
        MgConfig(max_levels=0)
