import numpy as np
import pytest
import scipy.sparse as sp

from darcydd import assembly, media, mesh, precond, spectral
from helpers import log_uniform_kappa


def build_instance(dims=(8, 8), sd=2, m=1, count=2, contrast=1e3, seed=0, mode="kappa"):
    g = mesh.StructuredGrid(dims, tuple(1.0 / d for d in dims))
    rng = np.random.default_rng(seed)
    perm = media.PermField(g, log_uniform_kappa(g, contrast, rng))
    layout = mesh.build_layout(g, sd=sd, worker_count=1, m=m)
    a_mat = assembly.assemble_fine(g, perm)
    local_mats = [assembly.assemble_local(g, perm, layout, i) for i in range(layout.n_elements)]
    bases = []
    for i in range(layout.n_elements):
        ahat = assembly.assemble_interior(g, perm, layout, i)
        weights = assembly.assemble_weights(g, perm, layout, i, mode=mode)
        bases.append(spectral.solve_local_eigen(ahat, weights, count, element=i))
    space = spectral.build_coarse_space(layout, bases)
    return g, perm, layout, a_mat, local_mats, space


def dense_reference_apply(layout, a_mat, local_mats, space, r):
    """Dense pseudo-inverse oracle for one preconditioner application."""
    r0t = space.prolongation.toarray()
    a0 = r0t.T @ a_mat.toarray() @ r0t
    out = r0t @ (np.linalg.pinv(a0) @ (r0t.T @ r))
    for i, a_i in enumerate(local_mats):
        ids = layout.cell_ids(i, oversampled=True)
        out[ids] += np.linalg.solve(a_i.toarray(), r[ids])
    return out


class TestSetup:
    def test_coarse_matrix_matches_dense_triple_product(self):
        _, _, layout, a_mat, local_mats, space = build_instance(count=2, seed=3)
        pre = precond.setup(a_mat, layout, space, local_mats)
        r0t = space.prolongation.toarray()
        oracle = r0t.T @ a_mat.toarray() @ r0t
        err = np.linalg.norm(pre.a0.toarray() - oracle) / np.linalg.norm(oracle)
        assert err <= 1e-12

    def test_coarse_rank_deficiency_is_one(self):
        _, _, layout, a_mat, local_mats, space = build_instance(count=3, seed=4)
        pre = precond.setup(a_mat, layout, space, local_mats)
        a0 = pre.a0.toarray()
        assert np.linalg.matrix_rank(a0) == space.n_coarse - 1

    def test_coarse_kernel_annihilated(self):
        _, _, layout, a_mat, local_mats, space = build_instance(count=2, contrast=1e5, seed=5)
        pre = precond.setup(a_mat, layout, space, local_mats)
        norm = np.abs(pre.a0).sum(axis=1).max()
        assert np.linalg.norm(pre.a0 @ pre.kernel) <= 1e-10 * norm * np.linalg.norm(pre.kernel)

    def test_local_factors_reproduce_matrices(self):
        _, _, layout, a_mat, local_mats, space = build_instance(count=2, contrast=1e4, seed=6)
        pre = precond.setup(a_mat, layout, space, local_mats)
        rng = np.random.default_rng(1)
        for a_i, factor in zip(local_mats, pre.local_factors):
            x = rng.standard_normal(a_i.shape[0])
            np.testing.assert_allclose(factor.solve(a_i @ x), x, rtol=1e-10, atol=1e-12)

    def test_singular_local_matrix_fails_factorization(self):
        g = mesh.StructuredGrid((4, 4), (0.25, 0.25))
        perm = media.uniform_medium(g)
        layout = mesh.build_layout(g, sd=2, worker_count=1, m=4)  # every grown box saturates
        a_mat = assembly.assemble_fine(g, perm)
        singular = [assembly.assemble_local(g, perm, layout, i, allow_singular=True)
                    for i in range(layout.n_elements)]
        bases = []
        for i in range(layout.n_elements):
            ahat = assembly.assemble_interior(g, perm, layout, i)
            weights = assembly.assemble_weights(g, perm, layout, i, mode="kappa")
            bases.append(spectral.solve_local_eigen(ahat, weights, 1, element=i))
        space = spectral.build_coarse_space(layout, bases)
        with pytest.raises(precond.FactorizationError):
            precond.setup(a_mat, layout, space, singular)


class TestDeflatedCoarseSolver:
    def test_zero_coarse_matrix(self):
        solver = precond.DeflatedCoarseSolver(sp.csc_matrix((1, 1)), np.array([1.0]))
        assert solver.solve(np.array([0.0])) == pytest.approx(0.0)
        assert solver.solve(np.array([2.0])) == pytest.approx(0.0)

    def test_matches_dense_pinv(self):
        rng = np.random.default_rng(2)
        b = rng.standard_normal((6, 5))
        a0 = b @ b.T  # PSD with a one-dimensional kernel
        kernel = np.linalg.svd(a0)[0][:, -1]
        solver = precond.DeflatedCoarseSolver(sp.csc_matrix(a0), kernel)
        pinv = np.linalg.pinv(a0)
        for _ in range(5):
            r = rng.standard_normal(6)
            np.testing.assert_allclose(solver.solve(r), pinv @ r, rtol=1e-9, atol=1e-12)


class TestApply:
    def test_zero_maps_to_zero(self):
        _, _, layout, a_mat, local_mats, space = build_instance()
        pre = precond.setup(a_mat, layout, space, local_mats)
        assert np.all(pre.apply(np.zeros(pre.n)) == 0.0)

    def test_linearity(self):
        _, _, layout, a_mat, local_mats, space = build_instance(seed=7)
        pre = precond.setup(a_mat, layout, space, local_mats)
        rng = np.random.default_rng(3)
        r1, r2 = rng.standard_normal((2, pre.n))
        lhs = pre.apply(2.5 * r1 - 1.5 * r2)
        rhs = 2.5 * pre.apply(r1) - 1.5 * pre.apply(r2)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-13 * np.abs(rhs).max())

    def test_matches_dense_pinv_oracle(self):
        _, _, layout, a_mat, local_mats, space = build_instance(dims=(6, 6), count=2, contrast=1e4, seed=8)
        pre = precond.setup(a_mat, layout, space, local_mats)
        rng = np.random.default_rng(4)
        for _ in range(3):
            r = rng.standard_normal(pre.n)
            expected = dense_reference_apply(layout, a_mat, local_mats, space, r)
            got = pre.apply(r)
            assert np.linalg.norm(got - expected) <= 1e-9 * np.linalg.norm(expected)

    def test_symmetric_quadratic_form(self):
        _, _, layout, a_mat, local_mats, space = build_instance(contrast=1e3, seed=9)
        pre = precond.setup(a_mat, layout, space, local_mats)
        rng = np.random.default_rng(5)
        for _ in range(5):
            r, s = rng.standard_normal((2, pre.n))
            lhs, rhs = r @ pre.apply(s), s @ pre.apply(r)
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))

    def test_positive_semidefinite_form(self):
        _, _, layout, a_mat, local_mats, space = build_instance(contrast=1e4, seed=10)
        pre = precond.setup(a_mat, layout, space, local_mats)
        rng = np.random.default_rng(6)
        for _ in range(5):
            r = rng.standard_normal(pre.n)
            assert r @ pre.apply(r) >= -1e-12 * (r @ r)

    def test_operator_wrapper(self):
        _, _, layout, a_mat, local_mats, space = build_instance()
        pre = precond.setup(a_mat, layout, space, local_mats)
        op = pre.as_operator()
        r = np.random.default_rng(7).standard_normal(pre.n)
        np.testing.assert_array_equal(op @ r, pre.apply(r))
