"""Single-layer tanh RNN: forward evaluation, finite-horizon unrolling, input gradients.

The recurrence is

    h_t = tanh(W_h h_{t-1} + W_x x_t + b),    y_t = W_out h_t + b_out.

Over a horizon of N steps the network is viewed as a map from the joint input
u = (x_1, ..., x_N, h_0) to the final output y_N.  The joint state of the
unrolled network is the flat vector

    z = (x_1, ..., x_N, h_0, h_1, ..., h_N),   len(z) = d_z = m*N + n*(N+1),

represented throughout as a plain 1-D ndarray in exactly this layout.  All
unrolled operators (A, B, E_in, E_out) are stored dense; at the scales this
package targets (N <= 100, n <= 16) d_z stays in the low thousands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

ACTIVATIONS = ("tanh",)


def _as_matrix(value, rows: int | None = None, cols: int | None = None, name: str = "") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise ContractError(f"{name}: expected a matrix, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ContractError(f"{name}: expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ContractError(f"{name}: expected {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name}: entries must be finite")
    return arr


def _as_vector(value, length: int | None = None, name: str = "") -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if length is not None and arr.shape[0] != length:
        raise ContractError(f"{name}: expected length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name}: entries must be finite")
    return arr


@dataclass(frozen=True)
class RnnModel:
    """Weights of one recurrent tanh layer plus a linear output layer.

    Shapes: W_x is n x m, W_h is n x n, b is n, W_out is p x n, b_out is p.
    Instances are immutable; the arrays are marked read-only on construction.
    """

    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        W_x = _as_matrix(self.W_x, name="W_x")
        n, m = W_x.shape
        W_h = _as_matrix(self.W_h, n, n, "W_h")
        b = _as_vector(self.b, n, "b")
        W_out = _as_matrix(self.W_out, None, n, "W_out")
        b_out = _as_vector(self.b_out, W_out.shape[0], "b_out")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unsupported activation {self.activation!r}")
        for field, arr in ("W_x", W_x), ("W_h", W_h), ("b", b), ("W_out", W_out), ("b_out", b_out):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, field, arr)

    @property
    def n(self) -> int:
        return self.W_x.shape[0]

    @property
    def m(self) -> int:
        return self.W_x.shape[1]

    @property
    def p(self) -> int:
        return self.W_out.shape[0]

    def act(self, v: np.ndarray) -> np.ndarray:
        return np.tanh(v)

    def act_deriv(self, h: np.ndarray) -> np.ndarray:
        """Activation derivative expressed through the post-activation value:
        tanh'(v) = 1 - tanh(v)^2 = 1/cosh(v)^2."""
        return 1.0 - h * h

    def joint_dim(self, horizon: int) -> int:
        return self.m * horizon + self.n * (horizon + 1)

    def input_dim(self, horizon: int) -> int:
        """Dimension of the joint input (x_1..x_N, h_0)."""
        return self.m * horizon + self.n


@dataclass(frozen=True)
class UnrolledSystem:
    """Block operators of the horizon-N unrolled network.

    A = [A_x A_h] and B = [0 B_h] satisfy B z = tanh(A z + b_tilde) for any
    joint state z assembled from a genuine forward pass.  E_in selects
    (x_1..x_N, h_0) from z; E_out applies W_out to h_N.
    """

    N: int
    n: int
    m: int
    p: int
    A: np.ndarray        # (n*N, d_z)
    B: np.ndarray        # (n*N, d_z)
    E_in: np.ndarray     # (m*N + n, d_z)
    E_out: np.ndarray    # (p, d_z)
    b_tilde: np.ndarray  # (n*N,)

    @property
    def d_z(self) -> int:
        return self.m * self.N + self.n * (self.N + 1)


def forward_step(model: RnnModel, h_prev: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One recurrence step: returns (h, y) for the given previous state and input."""
    h_prev = _as_vector(h_prev, model.n, "h_prev")
    x = _as_vector(x, model.m, "x")
    h = model.act(model.W_h @ h_prev + model.W_x @ x + model.b)
    y = model.W_out @ h + model.b_out
    return h, y


def forward_sequence(
    model: RnnModel, h0: np.ndarray, xs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the recurrence over a whole input sequence.

    Args:
        h0: initial hidden state, shape (n,).
        xs: inputs, shape (N, m) with N >= 1.

    Returns:
        (hs, ys, z): hidden states (N+1, n) with hs[0] = h0, outputs (N, p),
        and the joint state z of length d_z.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, model.m)
    if xs.ndim != 2 or xs.shape[1] != model.m:
        raise ContractError(f"xs: expected shape (N, {model.m}), got {xs.shape}")
    N = xs.shape[0]
    if N < 1:
        raise ContractError("input sequence must contain at least one step")
    h0 = _as_vector(h0, model.n, "h0")

    hs = np.empty((N + 1, model.n))
    ys = np.empty((N, model.p))
    hs[0] = h0
    h = h0
    for t in range(N):
        h, y = forward_step(model, h, xs[t])
        hs[t + 1] = h
        ys[t] = y
    z = np.concatenate([xs.reshape(-1), hs.reshape(-1)])
    return hs, ys, z


def forward_final_batch(model: RnnModel, U: np.ndarray, horizon: int) -> np.ndarray:
    """Vectorized final output y_N for a batch of joint inputs.

    Args:
        U: batch of packed inputs (x_1..x_N, h_0), shape (B, m*N + n).

    Returns:
        y_N for every row, shape (B, p).
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] != model.input_dim(horizon):
        raise ContractError(f"U: expected shape (B, {model.input_dim(horizon)}), got {U.shape}")
    m, n = model.m, model.n
    h = U[:, m * horizon:]
    for t in range(horizon):
        x = U[:, t * m:(t + 1) * m]
        h = np.tanh(h @ model.W_h.T + x @ model.W_x.T + model.b)
    return h @ model.W_out.T + model.b_out


def pack_input(xs: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """Flatten (xs, h0) into the joint input layout (x_1..x_N, h_0)."""
    return np.concatenate([np.asarray(xs, dtype=float).reshape(-1), np.asarray(h0, dtype=float).reshape(-1)])


def unpack_input(u: np.ndarray, model: RnnModel, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of pack_input: split a joint input vector into (xs (N, m), h0 (n,))."""
    u = _as_vector(u, model.input_dim(horizon), "u")
    split = model.m * horizon
    return u[:split].reshape(horizon, model.m), u[split:]


def build_unrolled(model: RnnModel, horizon: int) -> UnrolledSystem:
    """Assemble the unrolled block operators for the given horizon.

    A_x is block-diagonal with N copies of W_x; A_h carries W_h on the band
    mapping h_0..h_{N-1}; B_h is the shifted identity selecting h_1..h_N.
    """
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    n, m, p, N = model.n, model.m, model.p, horizon
    d_z = model.joint_dim(N)
    nN = n * N
    mN = m * N

    A = np.zeros((nN, d_z))
    B = np.zeros((nN, d_z))
    for t in range(N):
        rows = slice(t * n, (t + 1) * n)
        A[rows, t * m:(t + 1) * m] = model.W_x                     # A_x block
        A[rows, mN + t * n: mN + (t + 1) * n] = model.W_h          # A_h maps h_{t}
        B[rows, mN + (t + 1) * n: mN + (t + 2) * n] = np.eye(n)    # B_h selects h_{t+1}

    E_in = np.zeros((mN + n, d_z))
    E_in[:, : mN + n] = np.eye(mN + n)
    E_out = np.zeros((p, d_z))
    E_out[:, d_z - n:] = model.W_out
    b_tilde = np.tile(model.b, N)
    return UnrolledSystem(N=N, n=n, m=m, p=p, A=A, B=B, E_in=E_in, E_out=E_out, b_tilde=b_tilde)


def input_gradient(model: RnnModel, h0: np.ndarray, xs: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of w^T y_N with respect to the joint input (x_1..x_N, h_0).

    Computed by reverse accumulation through the recurrence; the tanh
    derivative is evaluated as 1 - h^2 from the stored hidden states.
    Returns a flat vector of length m*N + n in the pack_input layout.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, model.m)
    N = xs.shape[0]
    w = _as_vector(w, model.p, "w")
    hs, _, _ = forward_sequence(model, h0, xs)

    gx = np.empty((N, model.m))
    dh = model.W_out.T @ w
    for t in range(N, 0, -1):
        dv = dh * model.act_deriv(hs[t])
        gx[t - 1] = model.W_x.T @ dv
        dh = model.W_h.T @ dv
    return np.concatenate([gx.reshape(-1), dh])


MODEL_SCHEMA_KEYS = ("n", "m", "p", "activation", "W_x", "W_h", "b", "W_out", "b_out")


def model_to_dict(model: RnnModel) -> dict:
    """Model as the interchange JSON object (matrices as row-major nested lists)."""
    return {
        "n": model.n,
        "m": model.m,
        "p": model.p,
        "activation": model.activation,
        "W_x": model.W_x.tolist(),
        "W_h": model.W_h.tolist(),
        "b": model.b.tolist(),
        "W_out": model.W_out.tolist(),
        "b_out": model.b_out.tolist(),
    }


def model_from_dict(obj: dict) -> RnnModel:
    missing = [k for k in MODEL_SCHEMA_KEYS if k not in obj]
    if missing:
        raise ContractError(f"model object missing keys: {missing}")
    model = RnnModel(
        W_x=obj["W_x"],
        W_h=obj["W_h"],
        b=obj["b"],
        W_out=obj["W_out"],
        b_out=obj["b_out"],
        activation=obj["activation"],
    )
    declared = (obj["n"], obj["m"], obj["p"])
    if declared != (model.n, model.m, model.p):
        raise ContractError(f"declared dims {declared} do not match matrix shapes {(model.n, model.m, model.p)}")
    return model


def save_model(model: RnnModel, path: str | Path, extra: dict | None = None) -> None:
    obj = model_to_dict(model)
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> RnnModel:
    return model_from_dict(json.loads(Path(path).read_text()))
