import numpy as np
import pytest

from rnnlip import (
    ContractError,
    IntervalBox,
    RnnModel,
    build_M,
    build_problem,
    build_Q_global,
    build_Q_local,
    build_unrolled,
    certify_horizon,
    forward_sequence,
    product_bound,
    propagate_slope_bounds,
    solve_lipschitz,
    sweep_horizons,
)
from rnnlip.certify import certificate_residual
from rnnlip.conic import ConicBackend
from conftest import make_model, scalar_grid_oracle


def scalar_model(w_x=1.0, w_h=0.5, b=0.0, w_out=2.0):
    return RnnModel(W_x=[[w_x]], W_h=[[w_h]], b=[b], W_out=[[w_out]], b_out=[0.0])


def zero_output_model(rng, n=3, m=2):
    base = make_model(rng, n=n, m=m, p=2)
    return RnnModel(W_x=base.W_x, W_h=base.W_h, b=base.b,
                    W_out=np.zeros((2, n)), b_out=np.zeros(2))


class FailingBackend(ConicBackend):
    name = "failing"

    def solve(self, problem, tol=1e-8):
        raise RuntimeError("injected failure")


class TestBuildM:
    def test_zero_output_is_negative_semidefinite_for_any_rho(self, rng):
        sys = build_unrolled(zero_output_model(rng), 3)
        M0, M_rho = build_M(sys)
        for rho in (0.0, 0.5, 10.0):
            eigs = np.linalg.eigvalsh(M0 + rho * M_rho)
            assert eigs.max() <= 1e-12

    def test_output_block_position_scalar(self):
        sys = build_unrolled(scalar_model(), 1)
        M0, _ = build_M(sys)
        assert sys.d_z == 3
        expected = np.zeros((3, 3))
        expected[2, 2] = 4.0
        np.testing.assert_array_equal(M0, expected)

    def test_rho_coefficient_trace(self, rng):
        model = make_model(rng, n=3, m=2)
        for N in (1, 2, 5):
            sys = build_unrolled(model, N)
            _, M_rho = build_M(sys)
            assert np.trace(M_rho) == pytest.approx(-(model.m * N + model.n))


class TestQBasis:
    def test_matches_explicit_middle_block(self, rng):
        model = make_model(rng, n=2, m=2, p=1)
        sys = build_unrolled(model, 2)
        basis = build_Q_global(sys, 0.0, 1.0)
        stacked = np.vstack([sys.A, sys.B])
        n_neurons = sys.n * sys.N
        for k in range(len(basis)):
            e = np.zeros(n_neurons)
            e[k] = 1.0
            T = np.diag(e)
            mid = np.block([[-2 * 0.0 * 1.0 * T, (0.0 + 1.0) * T],
                            [(0.0 + 1.0) * T, -2 * T]])
            np.testing.assert_allclose(basis[k], stacked.T @ mid @ stacked, atol=1e-13)

    def test_general_slopes_match_explicit_middle_block(self, rng):
        model = make_model(rng, n=2, m=1, p=1)
        sys = build_unrolled(model, 3)
        n_neurons = sys.n * sys.N
        alpha = rng.uniform(0.0, 0.4, n_neurons)
        beta = rng.uniform(0.6, 1.0, n_neurons)
        from rnnlip import QBasis
        basis = QBasis(sys, alpha, beta)
        lam = rng.uniform(0, 2, n_neurons)
        stacked = np.vstack([sys.A, sys.B])
        T = np.diag(lam)
        D_x = np.diag(alpha * beta)
        D_p = np.diag(alpha + beta)
        mid = np.block([[-2 * D_x @ T, D_p @ T], [D_p @ T, -2 * T]])
        np.testing.assert_allclose(basis.assemble(lam), stacked.T @ mid @ stacked, atol=1e-12)

    def test_zero_multipliers_give_zero_matrix(self, rng):
        model = make_model(rng, n=2, m=1, p=1)
        sys = build_unrolled(model, 2)
        basis = build_Q_global(sys)
        np.testing.assert_array_equal(basis.assemble(np.zeros(len(basis))), np.zeros((sys.d_z, sys.d_z)))

    def test_incremental_constraint_nonnegative_on_trajectories(self, rng):
        # The slope-restriction quadratic form is nonnegative on differences of
        # genuine joint states, for any nonnegative multipliers.
        for _ in range(10):
            model = make_model(rng, n=3, m=2, w_scale=1.5)
            N = 4
            sys = build_unrolled(model, N)
            basis = build_Q_global(sys)
            for _ in range(100):
                lam = rng.uniform(0, 3, len(basis))
                Q = basis.assemble(lam)
                _, _, z1 = forward_sequence(model, rng.uniform(-1, 1, 3), rng.uniform(-2, 2, (N, 2)))
                _, _, z2 = forward_sequence(model, rng.uniform(-1, 1, 3), rng.uniform(-2, 2, (N, 2)))
                dz = z2 - z1
                assert dz @ Q @ dz >= -1e-9

    def test_alpha_above_beta_rejected(self, rng):
        sys = build_unrolled(make_model(rng), 2)
        with pytest.raises(ContractError):
            build_Q_global(sys, 0.5, 0.2)


class TestQLocal:
    def test_uniform_slopes_reduce_to_global_form(self, rng):
        model = make_model(rng, n=2, m=2)
        sys = build_unrolled(model, 3)
        slopes = propagate_slope_bounds(
            model, 3, x_box=IntervalBox.unbounded(2), h0_box=IntervalBox.unbounded(2))
        local = build_Q_local(sys, slopes)
        glob = build_Q_global(sys, 0.0, 1.0)
        for k in range(len(glob)):
            np.testing.assert_array_equal(local[k], glob[k])

    def test_layer_count_mismatch_rejected(self, rng):
        model = make_model(rng, n=2, m=2)
        sys = build_unrolled(model, 3)
        slopes = propagate_slope_bounds(model, 2)
        with pytest.raises(ContractError):
            build_Q_local(sys, slopes)

    def test_incremental_constraint_nonnegative_inside_boxes(self, rng):
        for _ in range(5):
            model = make_model(rng, n=3, m=2, w_scale=1.5)
            N = 3
            sys = build_unrolled(model, N)
            slopes = propagate_slope_bounds(model, N)
            basis = build_Q_local(sys, slopes)
            for _ in range(100):
                lam = rng.uniform(0, 3, len(basis))
                Q = basis.assemble(lam)
                _, _, z1 = forward_sequence(model, rng.uniform(-1, 1, 3), rng.uniform(-1, 1, (N, 2)))
                _, _, z2 = forward_sequence(model, rng.uniform(-1, 1, 3), rng.uniform(-1, 1, (N, 2)))
                dz = z2 - z1
                assert dz @ Q @ dz >= -1e-9


class TestSolve:
    def test_zero_output_model(self, rng):
        model = zero_output_model(rng)
        for N in (1, 3):
            res = certify_horizon(model, N)
            assert res.status == "optimal"
            assert res.L <= 1e-6

    def test_scalar_net_against_grid_oracle_and_product_bound(self, rng):
        for _ in range(5):
            w_x = rng.uniform(0.2, 2.0) * rng.choice([-1, 1])
            w_h = rng.uniform(0.2, 2.0) * rng.choice([-1, 1])
            b = rng.uniform(-1, 1)
            w_out = rng.uniform(0.2, 2.0) * rng.choice([-1, 1])
            model = scalar_model(w_x, w_h, b, w_out)
            res = certify_horizon(model, 1)
            oracle = scalar_grid_oracle(w_x, w_h, b, w_out)
            upper = product_bound(model, 1)
            assert res.status == "optimal"
            assert oracle - 1e-3 <= res.L <= upper + 1e-6

    def test_output_scaling_equivariance(self, rng):
        model = make_model(rng, n=3, m=2, p=2, wh_spectral=0.8)
        base = certify_horizon(model, 2)
        for c in (0.5, 2.0, 10.0):
            scaled = RnnModel(W_x=model.W_x, W_h=model.W_h, b=model.b,
                              W_out=c * model.W_out, b_out=model.b_out)
            res = certify_horizon(scaled, 2)
            assert abs(res.L - c * base.L) / res.L <= 1e-6

    def test_certificate_residual_recomputed_independently(self, rng):
        model = make_model(rng, n=3, m=2, p=2)
        sys = build_unrolled(model, 2)
        problem = build_problem(sys, build_Q_global(sys))
        res = solve_lipschitz(problem, horizon=2)
        assert res.status == "optimal"
        assert res.certificate_residual <= 1e-6
        assert res.certificate_residual == pytest.approx(
            certificate_residual(problem, res.rho, res.lam), abs=1e-12)
        assert res.L == pytest.approx(np.sqrt(res.rho), abs=1e-15)

    def test_degenerate_single_neuron_single_step(self):
        res = certify_horizon(scalar_model(0.7, 0.3, 0.1, 1.1), 1)
        assert res.status == "optimal"
        assert res.L > 0

    def test_multipliers_nonnegative(self, rng):
        model = make_model(rng, n=2, m=2, p=1)
        res = certify_horizon(model, 3)
        assert np.all(res.lam >= 0)

    def test_backend_failure_reported_not_raised(self, rng):
        model = make_model(rng, n=2, m=1, p=1)
        sys = build_unrolled(model, 1)
        problem = build_problem(sys, build_Q_global(sys))
        res = solve_lipschitz(problem, backend=FailingBackend(), horizon=1)
        assert res.status == "numerical-limit"
        assert "injected failure" in res.solver_name

    def test_local_never_worse_than_global(self, rng):
        for _ in range(5):
            model = make_model(rng, n=3, m=2, p=2, wh_spectral=0.7)
            for N in (1, 3):
                g = certify_horizon(model, N, mode="global")
                l = certify_horizon(model, N, mode="local")
                assert l.L <= g.L + 1e-6


class TestProductBound:
    def test_zero_output(self, rng):
        assert product_bound(zero_output_model(rng), 4) == 0.0

    def test_scalar_single_step(self):
        assert product_bound(scalar_model(), 1) == pytest.approx(2 * np.sqrt(1.25), abs=1e-12)

    def test_scalar_two_steps(self):
        assert product_bound(scalar_model(), 2) == pytest.approx(2 * np.sqrt(1.3125), abs=1e-12)

    def test_upper_bounds_certified_value(self, rng):
        for _ in range(5):
            model = make_model(rng, n=2, m=2, p=2, wh_spectral=0.6)
            for N in (1, 2, 4):
                res = certify_horizon(model, N)
                assert res.L <= product_bound(model, N) + 1e-6


class TestSweep:
    def test_single_horizon_equals_overall(self, rng):
        model = make_model(rng, n=2, m=2, p=1)
        sweep = sweep_horizons(model, [1])
        assert sweep.overall_L == sweep.results[0].L
        assert sweep.all_optimal

    def test_overall_is_max(self, rng):
        model = make_model(rng, n=2, m=2, p=1, wh_spectral=0.7)
        sweep = sweep_horizons(model, [1, 2, 4])
        assert sweep.overall_L == max(r.L for r in sweep.results)
        for r in sweep.results:
            assert sweep.overall_L >= r.L

    def test_failures_flagged_per_entry(self, rng):
        model = make_model(rng, n=2, m=1, p=1)
        sweep = sweep_horizons(model, [1, 2], backend=FailingBackend())
        assert not sweep.all_optimal
        assert all(r.status == "numerical-limit" for r in sweep.results)
        assert np.isnan(sweep.overall_L)

    def test_empty_horizons_rejected(self, rng):
        with pytest.raises(ContractError):
            sweep_horizons(make_model(rng), [])

    def test_thread_cap_env(self, rng, monkeypatch):
        monkeypatch.setenv("RNNLIP_THREADS", "2")
        model = make_model(rng, n=2, m=1, p=1, wh_spectral=0.7)
        sweep = sweep_horizons(model, [1, 2, 3])
        assert sweep.all_optimal
        assert sweep.overall_L == max(r.L for r in sweep.results)
