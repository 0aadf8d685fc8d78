"""Pluggable conic backend for the certification SDP.

The certifier hands over a problem in a solver-agnostic form:

    minimize    c^T x
    subject to  F0 + sum_j x_j F_j  <=  0   (negative semidefinite),
                x >= 0,

with the symmetric matrices F0, F_j given as upper-triangle triplets.  Each
backend converts the matrices to its own scaled-triangle vectorization
("svec"): the triangle is stacked and off-diagonal entries are multiplied by
sqrt(2), which makes <svec(X), svec(Y)> = trace(XY) and maps the PSD cone to
the solver's triangle cone.  The two supported solvers disagree on the
stacking order:

    Clarabel: upper triangle, column-major  -> index(r<=c) = c(c+1)/2 + r
    SCS:      lower triangle, column-major  -> index(r>=c) = c d - c(c-1)/2 + (r-c)

Both conventions are pinned by unit tests against an eigenvalue oracle; the
certifier additionally re-checks every returned solution with an independent
eigenvalue computation, so a convention slip cannot produce a silently wrong
bound.
"""

from __future__ import annotations

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ContractError

_SQRT2 = np.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_LIMIT = "numerical-limit"


@dataclass
class SymTriplets:
    """Upper-triangle entries (rows <= cols) of a symmetric matrix."""

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_dense(cls, S: np.ndarray) -> "SymTriplets":
        S = np.asarray(S, dtype=float)
        d = S.shape[0]
        r, c = np.nonzero(np.triu(S))
        return cls(dim=d, rows=r, cols=c, vals=S[r, c])

    def to_dense(self) -> np.ndarray:
        S = np.zeros((self.dim, self.dim))
        S[self.rows, self.cols] = self.vals
        off = self.rows != self.cols
        S[self.cols[off], self.rows[off]] = self.vals[off]
        return S


@dataclass
class ConicProblem:
    """min c^T x  s.t.  F0 + sum_j x_j F_j <= 0,  x >= 0."""

    c: np.ndarray
    psd_dim: int
    f0: SymTriplets
    # Triplets of all F_j stacked together, with var_index naming the owner.
    fj_rows: np.ndarray
    fj_cols: np.ndarray
    fj_vals: np.ndarray
    fj_var: np.ndarray

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str            # optimal | infeasible | numerical-limit
    objective: float
    solve_seconds: float
    solver_name: str
    raw_status: str = ""


def _tri_index_upper_colmajor(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return cols * (cols + 1) // 2 + rows


def _tri_index_lower_colmajor(rows: np.ndarray, cols: np.ndarray, dim: int) -> np.ndarray:
    return cols * dim - cols * (cols - 1) // 2 + (rows - cols)


def svec_from_triplets(trip: SymTriplets, order: str) -> np.ndarray:
    """Scaled-triangle vector of a symmetric matrix given as triplets."""
    tri_len = trip.dim * (trip.dim + 1) // 2
    out = np.zeros(tri_len)
    if order == "upper":
        idx = _tri_index_upper_colmajor(trip.rows, trip.cols)
    elif order == "lower":
        idx = _tri_index_lower_colmajor(trip.cols, trip.rows, trip.dim)  # swap: need r >= c
    else:
        raise ContractError(f"unknown triangle order {order!r}")
    scale = np.where(trip.rows == trip.cols, 1.0, _SQRT2)
    np.add.at(out, idx, trip.vals * scale)
    return out


def _psd_block(problem: ConicProblem, order: str) -> tuple[sparse.csc_matrix, np.ndarray]:
    """(A_psd, b_psd) such that b_psd - A_psd x = svec(-F0 - sum x_j F_j)."""
    d = problem.psd_dim
    tri_len = d * (d + 1) // 2
    if order == "upper":
        idx = _tri_index_upper_colmajor(problem.fj_rows, problem.fj_cols)
    else:
        idx = _tri_index_lower_colmajor(problem.fj_cols, problem.fj_rows, d)
    scale = np.where(problem.fj_rows == problem.fj_cols, 1.0, _SQRT2)
    A = sparse.coo_matrix(
        (problem.fj_vals * scale, (idx, problem.fj_var)),
        shape=(tri_len, problem.num_vars),
    ).tocsc()
    b = -svec_from_triplets(problem.f0, order)
    return A, b


def _stack_with_nonneg(A_psd: sparse.csc_matrix, b_psd: np.ndarray, nvar: int):
    """Prepend the x >= 0 block: s_nonneg = 0 - (-I) x = x."""
    A = sparse.vstack([-sparse.identity(nvar, format="csc"), A_psd]).tocsc()
    b = np.concatenate([np.zeros(nvar), b_psd])
    return A, b


class ConicBackend(ABC):
    """Interface every solver adapter implements.  Adapters must be reentrant
    or construct per-call solver instances."""

    name: str = "abstract"

    @abstractmethod
    def solve(self, problem: ConicProblem, tol: float = 1e-8) -> ConicSolution:
        ...


class ClarabelBackend(ConicBackend):
    """Interior-point backend (default): accurate solutions, upper-triangle svec."""

    name = "clarabel"

    def solve(self, problem: ConicProblem, tol: float = 1e-8) -> ConicSolution:
        import clarabel

        nvar = problem.num_vars
        A_psd, b_psd = _psd_block(problem, "upper")
        A, b = _stack_with_nonneg(A_psd, b_psd, nvar)
        cones = [clarabel.NonnegativeConeT(nvar), clarabel.PSDTriangleConeT(problem.psd_dim)]
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = tol
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        P = sparse.csc_matrix((nvar, nvar))
        t0 = time.perf_counter()
        solver = clarabel.DefaultSolver(P, problem.c, A, b, cones, settings)
        sol = solver.solve()
        elapsed = time.perf_counter() - t0
        raw = str(sol.status)
        if raw == "Solved":
            status = OPTIMAL
        elif raw in ("PrimalInfeasible", "DualInfeasible"):
            status = INFEASIBLE
        else:
            status = NUMERICAL_LIMIT
        x = np.asarray(sol.x, dtype=float)
        if x.shape[0] != nvar or not np.all(np.isfinite(x)):
            x = np.zeros(nvar)
            status = NUMERICAL_LIMIT
        return ConicSolution(
            x=x,
            status=status,
            objective=float(problem.c @ x),
            solve_seconds=elapsed,
            solver_name=self.name,
            raw_status=raw,
        )


class ScsBackend(ConicBackend):
    """First-order backend (fallback): lower-triangle svec, looser accuracy."""

    name = "scs"

    def __init__(self, eps: float | None = None, max_iters: int = 100_000):
        self.eps = eps
        self.max_iters = max_iters

    def solve(self, problem: ConicProblem, tol: float = 1e-8) -> ConicSolution:
        import scs

        nvar = problem.num_vars
        A_psd, b_psd = _psd_block(problem, "lower")
        A, b = _stack_with_nonneg(A_psd, b_psd, nvar)
        eps = self.eps if self.eps is not None else tol
        data = {"A": A, "b": b, "c": problem.c}
        cone = {"l": nvar, "s": [problem.psd_dim]}
        t0 = time.perf_counter()
        solver = scs.SCS(data, cone, verbose=False, eps_abs=eps, eps_rel=eps, max_iters=self.max_iters)
        sol = solver.solve()
        elapsed = time.perf_counter() - t0
        raw = str(sol["info"]["status"])
        if raw == "solved":
            status = OPTIMAL
        elif "infeasible" in raw or "unbounded" in raw:
            status = INFEASIBLE
        else:
            status = NUMERICAL_LIMIT
        x = np.asarray(sol["x"], dtype=float)
        if x.shape[0] != nvar or not np.all(np.isfinite(x)):
            x = np.zeros(nvar)
            status = NUMERICAL_LIMIT if status != INFEASIBLE else status
        return ConicSolution(
            x=x,
            status=status,
            objective=float(problem.c @ x),
            solve_seconds=elapsed,
            solver_name=self.name,
            raw_status=raw,
        )


def default_backend() -> ConicBackend:
    return ClarabelBackend()
