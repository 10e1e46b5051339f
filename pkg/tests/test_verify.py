import json

import numpy as np
import pytest

from darcydd import media, mesh, verify
from helpers import log_uniform_kappa


def make_instance(dims=(8, 8), contrast=1.0, seed=0, sd=2, m=1):
    g = mesh.StructuredGrid(dims, tuple(1.0 / d for d in dims))
    if contrast <= 1.0:
        perm = media.uniform_medium(g)
    else:
        rng = np.random.default_rng(seed)
        perm = media.PermField(g, log_uniform_kappa(g, contrast, rng))
    layout = mesh.build_layout(g, sd=sd, worker_count=1, m=m)
    return g, perm, layout


class TestConditionBound:
    def test_single_element_formula(self):
        for eps in (0.0, 0.5, 1.0, 3.7):
            assert verify.condition_bound(1, eps) == pytest.approx((2 + 9 * eps) * 5)

    def test_overlap_constant_of_single_element(self):
        g = mesh.StructuredGrid((8, 8), (1.0, 1.0))
        layout = mesh.build_layout(g, sd=1, worker_count=1, m=1)
        assert mesh.overlap_constant(layout) == 1


class TestAudit:
    def test_uniform_instance_all_checks_pass(self):
        g, perm, layout = make_instance()
        cert = verify.audit(g, perm, layout, eps_target=1.0)
        assert cert.passed
        assert cert.measured_cond <= cert.cond_bound * 1.05
        names = {c.name for c in cert.checks}
        assert {"partition_of_unity", "fine_constant_kernel", "local_matrix_dominance",
                "interior_splitting", "lumped_weight_dominance", "coarse_kernel_dimension",
                "spectrum_interval", "cond_within_bound"} <= names

    def test_random_instance_passes(self):
        g, perm, layout = make_instance(dims=(6, 6, 4), contrast=1e4, seed=3)
        cert = verify.audit(g, perm, layout, eps_target=0.5)
        assert cert.passed, [c.name for c in cert.checks if not c.passed]

    def test_certificate_fields_consistent(self):
        g, perm, layout = make_instance(dims=(12, 8), contrast=1e3, seed=4)
        cert = verify.audit(g, perm, layout, fixed_count=3)
        recomputed = verify.condition_bound(cert.overlap_constant, cert.epsilon)
        assert cert.cond_bound == pytest.approx(recomputed)
        assert cert.meta["n"] == 96
        assert cert.meta["basis_counts"] == [3, 3, 3, 3]

    def test_deterministic(self):
        g, perm, layout = make_instance(dims=(8, 6), contrast=1e4, seed=5)
        one = verify.audit(g, perm, layout, fixed_count=2).to_dict()
        two = verify.audit(g, perm, layout, fixed_count=2).to_dict()
        assert one == two

    def test_epsilon_non_increasing_in_count(self):
        g, perm, layout = make_instance(dims=(8, 8), contrast=1e4, seed=6)
        eps = [verify.audit(g, perm, layout, fixed_count=c).epsilon for c in (1, 2, 4, 6)]
        assert all(e2 <= e1 + 1e-15 for e1, e2 in zip(eps, eps[1:]))

    def test_kernel_dimension_checks(self):
        g, perm, layout = make_instance(dims=(6, 6), contrast=1e2, seed=7)
        cert = verify.audit(g, perm, layout, fixed_count=2)
        by_name = {c.name: c for c in cert.checks}
        assert by_name["fine_kernel_dimension"].passed
        assert by_name["coarse_kernel_dimension"].passed

    def test_json_round_trip(self):
        g, perm, layout = make_instance()
        cert = verify.audit(g, perm, layout, eps_target=1.0)
        loaded = json.loads(cert.to_json())
        assert loaded["overlap_constant"] == cert.overlap_constant
        assert loaded["passed"] is True
        assert len(loaded["checks"]) == len(cert.checks)

    def test_rejects_oversized_instance(self):
        g, perm, layout = make_instance(dims=(8, 8))
        with pytest.raises(ValueError):
            verify.audit(g, perm, layout, eps_target=1.0, dense_cap=10)

    def test_rejects_no_overlap(self):
        g, perm, layout = make_instance(m=0)
        with pytest.raises(ValueError):
            verify.audit(g, perm, layout, eps_target=1.0)

    def test_rejects_conflicting_policies(self):
        g, perm, layout = make_instance()
        with pytest.raises(ValueError):
            verify.audit(g, perm, layout, eps_target=1.0, fixed_count=2)

    def test_epsilon_stays_bounded_with_contrast_for_kappa_weights(self):
        g = mesh.StructuredGrid((16, 16), (1 / 16, 1 / 16))
        layout = mesh.build_layout(g, sd=2, worker_count=1, m=1)
        eps = {}
        for cr in (0.0, 3.0, 6.0):
            perm = media.channel_medium(g, 3, cr)
            eps[cr] = verify.audit(g, perm, layout, fixed_count=6, weight_mode="kappa").epsilon
        assert eps[3.0] <= 2.0 * eps[0.0]
        assert eps[6.0] <= 2.0 * eps[0.0]


class TestAdaptiveBasis:
    def test_threshold_satisfied(self):
        from darcydd import assembly

        g, perm, layout = make_instance(dims=(8, 8), contrast=1e4, seed=8)
        ahat = assembly.assemble_interior(g, perm, layout, 0)
        weights = assembly.assemble_weights(g, perm, layout, 0, mode="lumped")
        for eps_t in (10.0, 4.0):
            basis = verify.adaptive_basis(ahat, weights, eps_t)
            if basis.next_value is not None:
                assert 1.0 / basis.next_value <= eps_t

    def test_smaller_target_needs_more_vectors(self):
        from darcydd import assembly

        g, perm, layout = make_instance(dims=(8, 8), contrast=1e4, seed=9)
        ahat = assembly.assemble_interior(g, perm, layout, 0)
        weights = assembly.assemble_weights(g, perm, layout, 0, mode="lumped")
        loose = verify.adaptive_basis(ahat, weights, 20.0)
        tight = verify.adaptive_basis(ahat, weights, 2.0)
        assert tight.count >= loose.count

    def test_rejects_bad_target(self):
        from darcydd import assembly

        g, perm, layout = make_instance()
        ahat = assembly.assemble_interior(g, perm, layout, 0)
        weights = assembly.assemble_weights(g, perm, layout, 0, mode="lumped")
        with pytest.raises(ValueError):
            verify.adaptive_basis(ahat, weights, 0.0)
