"""Forward maps: heat-type propagator, elliptic solve, weighted adjoints.

The propagator is checked against closed-form Fourier decay, the elliptic
map against a separable eigenfunction, and the adjoints against dense
transposes.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mgipm.grid import NodalField, build_hierarchy, inner_h, mass_apply, node_coordinates
from mgipm.operators import (
    EllipticConfig,
    ParabolicConfig,
    ZeroOperator,
    adjoint_h_apply,
    convergence_probe,
    elliptic_build,
    parabolic_build,
)


@pytest.fixture
def line_1024():
    return build_hierarchy("periodic-interval", 1024, 1).finest


class TestParabolicBuild:
    def test_constants_ride_through_without_reaction(self, line_1024):
        op = parabolic_build(line_1024, ParabolicConfig(a=4e-3, b=0.4, c=0.0, T=0.8))
        out = op.apply(np.full(1024, 2.0))
        assert np.max(np.abs(out - 2.0)) <= 1e-12

    def test_pure_diffusion_damps_fourier_mode(self, line_1024):
        cfg = ParabolicConfig(a=4e-3, b=0.0, c=0.0, T=0.8)
        op = parabolic_build(line_1024, cfg)
        x = node_coordinates(line_1024)
        u0 = np.sin(2 * np.pi * x)
        expected = np.exp(-4 * np.pi**2 * cfg.a * cfg.T) * u0
        assert np.max(np.abs(op.apply(u0) - expected)) <= 1e-3

    def test_transport_shifts_phase(self, line_1024):
        # with b != 0 the damped mode also travels; the flux form
        # u_t = (a u_x + b u)_x moves profiles toward smaller x
        cfg = ParabolicConfig(a=4e-3, b=0.4, c=0.0, T=0.8)
        op = parabolic_build(line_1024, cfg)
        x = node_coordinates(line_1024)
        u0 = np.sin(2 * np.pi * x)
        decay = np.exp(-4 * np.pi**2 * cfg.a * cfg.T)
        expected = decay * np.sin(2 * np.pi * (x + cfg.b * cfg.T))
        assert np.max(np.abs(op.apply(u0) - expected)) <= 5e-3

    def test_methods_agree(self):
        level = build_hierarchy("periodic-interval", 128, 1).finest
        x = node_coordinates(level)
        u = np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x)
        spectral = parabolic_build(level, ParabolicConfig(method="spectral"))
        stepping = parabolic_build(level, ParabolicConfig(method="stepping"))
        assert_allclose(stepping.apply(u), spectral.apply(u), rtol=1e-9, atol=1e-12)

    def test_transpose_pairing(self, rng):
        level = build_hierarchy("periodic-interval", 256, 1).finest
        op = parabolic_build(level, ParabolicConfig())
        for _ in range(10):
            u = rng.standard_normal(256)
            v = rng.standard_normal(256)
            lhs = float(op.apply(u) @ v)
            rhs = float(u @ op.apply_transpose(v))
            assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(lhs))

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            ParabolicConfig(a=-1.0).validate()
        with pytest.raises(ValueError):
            ParabolicConfig(T=0.0).validate()
        with pytest.raises(ValueError):
            ParabolicConfig(method="exact").validate()


@pytest.fixture(scope="module")
def square_64():
    level = build_hierarchy("dirichlet-square", 64, 1).finest
    return level, elliptic_build(level)


class TestEllipticBuild:
    def test_separable_eigenfunction(self, square_64):
        level, op = square_64
        x, y = node_coordinates(level)
        u = np.sin(np.pi * x) * np.sin(np.pi * y)
        expected = -u / (2 * np.pi**2)
        err = op.apply(u) - expected
        rel = np.sqrt(inner_h(level, NodalField(0, err), NodalField(0, err)))
        rel /= np.sqrt(inner_h(level, NodalField(0, expected), NodalField(0, expected)))
        assert rel <= 2e-3

    def test_zero_maps_to_zero(self, square_64):
        level, op = square_64
        assert not op.apply(np.zeros(level.n_dof)).any()

    def test_transpose_pairing(self, square_64, rng):
        level, op = square_64
        n = level.n_dof
        for _ in range(10):
            u = rng.standard_normal(n)
            v = rng.standard_normal(n)
            lhs = float(op.apply(u) @ v)
            rhs = float(u @ op.apply_transpose(v))
            assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(lhs))

    def test_negative_definite_in_mass_pairing(self, rng):
        # <K u, u>_M < 0 for u != 0: the map inverts a negative Laplacian
        level = build_hierarchy("dirichlet-square", 16, 1).finest
        op = elliptic_build(level)
        for _ in range(5):
            u = rng.standard_normal(level.n_dof)
            val = float(mass_apply(level, op.apply(u)) @ u)
            assert val < 0

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            EllipticConfig(inner_solver="cg", inner_tol=1e-6).validate()
        with pytest.raises(ValueError):
            EllipticConfig(inner_solver="gauss").validate()


class TestAdjointH:
    def test_pairing_in_weighted_inner_product(self, rng):
        level = build_hierarchy("dirichlet-square", 32, 1).finest
        op = elliptic_build(level)
        n = level.n_dof
        for _ in range(10):
            u = rng.standard_normal(n)
            v = rng.standard_normal(n)
            lhs = inner_h(level, NodalField(0, op.apply(u)), NodalField(0, v))
            rhs = inner_h(level, NodalField(0, u), NodalField(0, adjoint_h_apply(op, v)))
            assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(lhs))

    def test_uniform_weights_reduce_to_plain_transpose(self, rng):
        # on the periodic line all weights equal h, so the weighted adjoint
        # collapses to the Euclidean transpose
        level = build_hierarchy("periodic-interval", 128, 1).finest
        op = parabolic_build(level, ParabolicConfig())
        v = rng.standard_normal(128)
        assert_allclose(adjoint_h_apply(op, v), op.apply_transpose(v), rtol=1e-13, atol=1e-15)

    def test_dense_identity(self, rng):
        # materialize W^{-1} K^T W column by column and compare
        level = build_hierarchy("dirichlet-square", 8, 1).finest
        op = elliptic_build(level)
        n = level.n_dof
        K = np.column_stack([op.apply(col) for col in np.eye(n)])
        W = np.diag(level.weights)
        dense_adj = np.linalg.solve(W, K.T @ W)
        v = rng.standard_normal(n)
        assert_allclose(adjoint_h_apply(op, v), dense_adj @ v, rtol=1e-11, atol=1e-13)


class TestMatvecCounter:
    def test_each_application_counts_once(self):
        level = build_hierarchy("periodic-interval", 64, 1).finest
        op = parabolic_build(level, ParabolicConfig())
        assert op.matvec_counter == 0
        u = np.ones(64)
        op.apply(u)
        assert op.matvec_counter == 1
        op.apply_transpose(u)
        assert op.matvec_counter == 2
        op.apply(u)
        op.apply(u)
        assert op.matvec_counter == 4

    def test_zero_operator_counts_too(self):
        level = build_hierarchy("periodic-interval", 8, 1).finest
        op = ZeroOperator(0, level)
        out = op.apply(np.arange(8.0))
        assert not out.any()
        assert op.matvec_counter == 1


class TestConvergenceProbe:
    def test_identical_coarse_and_fine_data_give_zero_error(self):
        hier = build_hierarchy("periodic-interval", 32, 3)
        errors = convergence_probe(hier, lambda level: ZeroOperator(0, level), lambda x: 0.0 * x + 1.0)
        assert all(e <= 1e-14 for e in errors)

    # the probe measures each level against the finest one, so for a
    # second-order map the adjacent error ratio is (4^m - 1)/(4^(m-1) - 1)
    # at distance m from the reference; keeping m >= 2 holds it near 4,
    # while the pair next to the reference would drift to 15/3 = 5

    def test_parabolic_second_order(self):
        from mgipm.cli import two_bump_target

        hier = build_hierarchy("periodic-interval", 64, 6)
        build = lambda level: parabolic_build(level, ParabolicConfig())
        errors = convergence_probe(hier, build, two_bump_target)
        for coarse, fine in zip(errors[:-1], errors[1:-1]):
            assert 3.2 <= coarse / fine <= 4.8

    def test_elliptic_second_order(self):
        hier = build_hierarchy("dirichlet-square", 8, 6)
        build = lambda level: elliptic_build(level)
        errors = convergence_probe(
            hier, build, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        )
        for coarse, fine in zip(errors[:-1], errors[1:-1]):
            assert 3.2 <= coarse / fine <= 4.8
