import numpy as np
import pytest

from rnnlip.conic import (
    INFEASIBLE,
    OPTIMAL,
    ClarabelBackend,
    ConicProblem,
    ScsBackend,
    SymTriplets,
    svec_from_triplets,
)


def eigenvalue_problem(C: np.ndarray) -> ConicProblem:
    """min t s.t. C - t I <= 0; the optimum is the largest eigenvalue of C."""
    d = C.shape[0]
    eye = SymTriplets.from_dense(-np.eye(d))
    return ConicProblem(
        c=np.array([1.0]),
        psd_dim=d,
        f0=SymTriplets.from_dense(C),
        fj_rows=eye.rows,
        fj_cols=eye.cols,
        fj_vals=eye.vals,
        fj_var=np.zeros(eye.rows.shape[0], dtype=np.int64),
    )


class TestSymTriplets:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        S = rng.normal(size=(5, 5))
        S = (S + S.T) / 2
        np.testing.assert_allclose(SymTriplets.from_dense(S).to_dense(), S, atol=1e-15)

    def test_svec_preserves_inner_products(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(4, 4)); X = (X + X.T) / 2
        Y = rng.normal(size=(4, 4)); Y = (Y + Y.T) / 2
        for order in ("upper", "lower"):
            vx = svec_from_triplets(SymTriplets.from_dense(X), order)
            vy = svec_from_triplets(SymTriplets.from_dense(Y), order)
            assert vx @ vy == pytest.approx(np.trace(X @ Y), abs=1e-12)


@pytest.mark.parametrize("backend", [ClarabelBackend(), ScsBackend()])
class TestBackends:
    def test_matches_eigenvalue_oracle(self, backend):
        # Random symmetric matrices with distinct off-diagonal structure pin
        # down the triangle ordering convention of each solver.
        rng = np.random.default_rng(7)
        for _ in range(3):
            C = rng.normal(size=(5, 5))
            C = (C + C.T) / 2
            sol = backend.solve(eigenvalue_problem(C), tol=1e-9)
            assert sol.status == OPTIMAL
            target = np.linalg.eigvalsh(C).max()
            # The oracle problem needs t >= lambda_max, and t is unbounded only
            # below; x >= 0 requires a PSD test matrix here.
            assert sol.x[0] == pytest.approx(max(target, 0.0), abs=1e-6)

    def test_nonnegativity_respected(self, backend):
        # With C negative definite the unconstrained optimum would be t < 0;
        # the cone constraint pins it at zero.
        C = -np.eye(3)
        sol = backend.solve(eigenvalue_problem(C), tol=1e-9)
        assert sol.status == OPTIMAL
        assert sol.x[0] == pytest.approx(0.0, abs=1e-6)

    def test_infeasible_detected(self, backend):
        # I + t*0 <= 0 cannot hold for any t.
        d = 3
        problem = ConicProblem(
            c=np.array([1.0]),
            psd_dim=d,
            f0=SymTriplets.from_dense(np.eye(d)),
            fj_rows=np.array([0]),
            fj_cols=np.array([0]),
            fj_vals=np.array([0.0]),
            fj_var=np.array([0], dtype=np.int64),
        )
        sol = backend.solve(problem, tol=1e-9)
        assert sol.status == INFEASIBLE
