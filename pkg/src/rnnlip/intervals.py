"""Interval propagation through the unrolled network and local slope bounds for tanh.

Starting from a box on the inputs and a box on the initial hidden state, the
propagation alternates three exact steps for each layer l = 1..N:

  1. pre-activation extrema of the affine map W_x x + W_h h + b over the box
     (closed form by sign-splitting each weight),
  2. per-neuron slope bounds (alpha, beta) of tanh on that pre-activation
     interval (tanh' = 1/cosh^2 is even and decreasing in |v|),
  3. the next hidden-state box as tanh of the pre-activation box (exact
     because tanh is monotone).

Unbounded coordinates are represented by +-inf sentinels; 1/cosh^2(inf) is 0,
so the unbounded case degrades gracefully to the global slopes (0, 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .model import RnnModel


@dataclass(frozen=True)
class IntervalBox:
    """Axis-aligned box lb <= x <= ub; +-inf entries mark unbounded coordinates."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.asarray(self.ub, dtype=float).reshape(-1)
        if lb.shape != ub.shape:
            raise ContractError("lb and ub must have the same length")
        if np.any(np.isnan(lb)) or np.any(np.isnan(ub)):
            raise ContractError("box bounds must not contain NaN")
        if np.any(lb > ub):
            raise ContractError("box requires lb <= ub elementwise")
        lb = lb.copy()
        ub = ub.copy()
        lb.flags.writeable = False
        ub.flags.writeable = False
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def dim(self) -> int:
        return self.lb.shape[0]

    @classmethod
    def symmetric(cls, dim: int, radius: float = 1.0) -> "IntervalBox":
        return cls(np.full(dim, -radius), np.full(dim, radius))

    @classmethod
    def unbounded(cls, dim: int) -> "IntervalBox":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(x >= self.lb - tol) and np.all(x <= self.ub + tol))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples inside the box; unbounded coordinates draw from [-10, 10]."""
        lo = np.where(np.isfinite(self.lb), self.lb, -10.0)
        hi = np.where(np.isfinite(self.ub), self.ub, 10.0)
        return rng.uniform(lo, hi, size=(count, self.dim))


@dataclass(frozen=True)
class SlopeBoundSet:
    """Per-layer, per-neuron slope intervals plus the recorded interval state.

    alpha/beta have shape (N, n): row l-1 holds the bounds for layer l.
    v_lb/v_ub record the pre-activation boxes, h_lb/h_ub the hidden-state
    boxes entering each layer (row 0 is the initial-state box).
    """

    alpha: np.ndarray
    beta: np.ndarray
    v_lb: np.ndarray
    v_ub: np.ndarray
    h_lb: np.ndarray
    h_ub: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "beta", "v_lb", "v_ub", "h_lb", "h_ub"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise ContractError(f"{name} must be a (layers, neurons) array")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.alpha.shape != self.beta.shape:
            raise ContractError("alpha and beta shapes disagree")
        if np.any(self.alpha < -1e-15) or np.any(self.beta > 1.0 + 1e-15) or np.any(self.alpha > self.beta + 1e-15):
            raise ContractError("slope bounds must satisfy 0 <= alpha <= beta <= 1")

    @property
    def layers(self) -> int:
        return self.alpha.shape[0]

    @property
    def neurons(self) -> int:
        return self.alpha.shape[1]

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "neurons": self.neurons,
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "v_lb": self.v_lb.tolist(),
            "v_ub": self.v_ub.tolist(),
            "h_lb": self.h_lb.tolist(),
            "h_ub": self.h_ub.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SlopeBoundSet":
        return cls(
            alpha=np.asarray(obj["alpha"], dtype=float),
            beta=np.asarray(obj["beta"], dtype=float),
            v_lb=np.asarray(obj["v_lb"], dtype=float),
            v_ub=np.asarray(obj["v_ub"], dtype=float),
            h_lb=np.asarray(obj["h_lb"], dtype=float),
            h_ub=np.asarray(obj["h_ub"], dtype=float),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _affine_extreme(W: np.ndarray, lb: np.ndarray, ub: np.ndarray, minimize: bool) -> np.ndarray:
    """Row-wise min (or max) of W v over lb <= v <= ub.

    Negative weights take the opposite bound; zero weights contribute exactly
    zero so that 0 * inf never pollutes the result.
    """
    pick_low = (W > 0) == minimize  # weight > 0 wants lb when minimizing, ub when maximizing
    chosen = np.where(pick_low, lb[None, :], ub[None, :])
    with np.errstate(invalid="ignore"):
        contrib = W * chosen
    contrib[W == 0.0] = 0.0
    return contrib.sum(axis=1)


def preactivation_bounds(model: RnnModel, x_box: IntervalBox, h_box: IntervalBox) -> IntervalBox:
    """Exact per-neuron min/max of W_x x + W_h h + b over the given boxes."""
    if x_box.dim != model.m:
        raise ContractError(f"x_box has dim {x_box.dim}, expected {model.m}")
    if h_box.dim != model.n:
        raise ContractError(f"h_box has dim {h_box.dim}, expected {model.n}")
    v_lb = (
        _affine_extreme(model.W_x, x_box.lb, x_box.ub, minimize=True)
        + _affine_extreme(model.W_h, h_box.lb, h_box.ub, minimize=True)
        + model.b
    )
    v_ub = (
        _affine_extreme(model.W_x, x_box.lb, x_box.ub, minimize=False)
        + _affine_extreme(model.W_h, h_box.lb, h_box.ub, minimize=False)
        + model.b
    )
    return IntervalBox(v_lb, v_ub)


def _sech2(v: np.ndarray) -> np.ndarray:
    """1/cosh(v)^2 with overflow mapped to the correct limit 0."""
    with np.errstate(over="ignore"):
        c = np.cosh(v)
        return 1.0 / (c * c)


def local_slopes(v_box: IntervalBox) -> tuple[np.ndarray, np.ndarray]:
    """Slope bounds of tanh over the pre-activation interval of each neuron.

    alpha_i = sech^2(max(|lb_i|, |ub_i|)); beta_i = 1 when the interval
    straddles 0, else sech^2(min(|lb_i|, |ub_i|)).
    """
    abs_lb = np.abs(v_box.lb)
    abs_ub = np.abs(v_box.ub)
    alpha = _sech2(np.maximum(abs_lb, abs_ub))
    beta = np.where(
        (v_box.lb <= 0.0) & (v_box.ub >= 0.0),
        1.0,
        _sech2(np.minimum(abs_lb, abs_ub)),
    )
    return alpha, beta


def next_hidden_bounds(v_box: IntervalBox) -> IntervalBox:
    """Hidden-state box after the activation; exact since tanh is monotone."""
    return IntervalBox(np.tanh(v_box.lb), np.tanh(v_box.ub))


def propagate_slope_bounds(
    model: RnnModel,
    horizon: int,
    x_box: IntervalBox | None = None,
    h0_box: IntervalBox | None = None,
) -> SlopeBoundSet:
    """Run the layer-by-layer interval propagation over the whole horizon.

    The input box is the same at every step (inputs share one normalization
    range).  Defaults: x_box = [-1, 1]^m and h0_box = [-1, 1]^n, the
    conservative tanh output range.
    """
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    if x_box is None:
        x_box = IntervalBox.symmetric(model.m)
    if h0_box is None:
        h0_box = IntervalBox.symmetric(model.n)

    alphas = np.empty((horizon, model.n))
    betas = np.empty((horizon, model.n))
    v_lb = np.empty((horizon, model.n))
    v_ub = np.empty((horizon, model.n))
    h_lb = np.empty((horizon + 1, model.n))
    h_ub = np.empty((horizon + 1, model.n))

    h_box = h0_box
    h_lb[0], h_ub[0] = h_box.lb, h_box.ub
    for layer in range(horizon):
        v_box = preactivation_bounds(model, x_box, h_box)
        alphas[layer], betas[layer] = local_slopes(v_box)
        v_lb[layer], v_ub[layer] = v_box.lb, v_box.ub
        h_box = next_hidden_bounds(v_box)
        h_lb[layer + 1], h_ub[layer + 1] = h_box.lb, h_box.ub
    return SlopeBoundSet(alpha=alphas, beta=betas, v_lb=v_lb, v_ub=v_ub, h_lb=h_lb, h_ub=h_ub)
