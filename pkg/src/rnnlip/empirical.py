"""Empirical lower bounds on the Lipschitz constant: random and active exploration.

Both estimators maximize the realized sensitivity ratio

    L_emp = ||y_N(u2) - y_N(u1)||_2 / ||u2 - u1||_2

over pairs of joint inputs u = (x_1..x_N, h_0).  Random exploration samples
base points uniformly from [-1, 1] and perturbs them with Gaussian noise;
active exploration performs Adam gradient ascent on the ratio, treating the
base point and the perturbation jointly as optimization variables, restarted
from several random initializations.  The bounded variant squashes the base
through tanh to keep it inside [-1, 1] and scales a tanh-squashed
perturbation into a small box, which keeps the search differentiable.

Any value either estimator returns is a certified lower bound: it is the
ratio realized by a concrete, stored input pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, NumericalError
from .model import RnnModel, forward_final_batch, input_gradient, unpack_input
from .optim import Adam

RANDOM = "random"
ACTIVE = "active"
ACTIVE_BOUNDED = "active_bounded"

#: Relative improvement below which an epoch counts as non-improving.
IMPROVEMENT_RTOL = 1e-6


@dataclass(frozen=True)
class ExplorationConfig:
    """Knobs for the estimators; defaults follow the evaluation protocol
    (Gaussian perturbations of variance 1e-3, five restarts, patience 10)."""

    samples: int = 100_000
    restarts: int = 5
    perturbation_variance: float = 1e-3
    perturbation_box: float = 1e-3
    patience: int = 10
    step_size: float = 1e-2
    max_epochs: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1 or self.restarts < 1 or self.max_epochs < 1:
            raise ContractError("samples, restarts and max_epochs must be positive")
        if self.patience < 1:
            raise ContractError("patience must be >= 1")
        if self.perturbation_variance <= 0 or self.perturbation_box <= 0 or self.step_size <= 0:
            raise ContractError("variances, boxes and step sizes must be positive")


@dataclass
class EmpiricalResult:
    """A realized lower bound together with the input pair that achieves it."""

    L_emp: float
    u1: np.ndarray
    u2: np.ndarray
    method: str
    evaluations: int
    horizon: int

    @property
    def argmax_pair(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u1, self.u2

    def to_dict(self) -> dict:
        return {
            "L_emp": self.L_emp,
            "method": self.method,
            "horizon": self.horizon,
            "evaluations": self.evaluations,
            "argmax_pair": {"u1": self.u1.tolist(), "u2": self.u2.tolist()},
        }


def l_emp(model: RnnModel, u1: np.ndarray, u2: np.ndarray, horizon: int) -> float:
    """Sensitivity ratio for one input pair; raises if the pair coincides."""
    u1 = np.asarray(u1, dtype=float).reshape(-1)
    u2 = np.asarray(u2, dtype=float).reshape(-1)
    dim = model.input_dim(horizon)
    if u1.shape[0] != dim or u2.shape[0] != dim:
        raise ContractError(f"inputs must have length {dim}")
    denom = float(np.linalg.norm(u2 - u1))
    if denom == 0.0:
        raise ContractError("u1 and u2 must differ")
    ys = forward_final_batch(model, np.stack([u1, u2]), horizon)
    return float(np.linalg.norm(ys[1] - ys[0]) / denom)


def _model_batch_outputs(model: RnnModel, horizon: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda U: forward_final_batch(model, U, horizon)


def _model_cotangent_grad(model: RnnModel, horizon: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    def grad(u: np.ndarray, w: np.ndarray) -> np.ndarray:
        xs, h0 = unpack_input(u, model, horizon)
        return input_gradient(model, h0, xs, w)

    return grad


def _random_engine(
    batch_outputs: Callable[[np.ndarray], np.ndarray],
    dim: int,
    cfg: ExplorationConfig,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray, np.ndarray, int]:
    """Max sensitivity ratio over sampled (base, base + noise) pairs."""
    best = -1.0
    best_pair = None
    sigma = np.sqrt(cfg.perturbation_variance)
    remaining = cfg.samples
    chunk_size = 65536
    while remaining > 0:
        count = min(chunk_size, remaining)
        remaining -= count
        base = rng.uniform(-1.0, 1.0, size=(count, dim))
        noise = rng.normal(0.0, sigma, size=(count, dim))
        pert = base + noise
        y1 = batch_outputs(base)
        y2 = batch_outputs(pert)
        num = np.linalg.norm(y2 - y1, axis=1)
        den = np.linalg.norm(noise, axis=1)
        ok = den > 0
        ratios = np.zeros(count)
        ratios[ok] = num[ok] / den[ok]
        idx = int(np.argmax(ratios))
        if ratios[idx] > best:
            best = float(ratios[idx])
            best_pair = (base[idx].copy(), pert[idx].copy())
    return best, best_pair[0], best_pair[1], 2 * cfg.samples


def _ratio_and_grads(
    batch_outputs: Callable[[np.ndarray], np.ndarray],
    cotangent_grad: Callable[[np.ndarray, np.ndarray], np.ndarray],
    base: np.ndarray,
    delta: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Ratio R(base, delta) = ||F(base+delta) - F(base)|| / ||delta|| and its
    gradients with respect to base and delta."""
    u1 = base
    u2 = base + delta
    ys = batch_outputs(np.stack([u1, u2]))
    dy = ys[1] - ys[0]
    r = float(np.linalg.norm(dy))
    d = float(np.linalg.norm(delta))
    if d == 0.0:
        return 0.0, np.zeros_like(base), np.zeros_like(delta)
    ratio = r / d
    if r == 0.0:
        return 0.0, np.zeros_like(base), np.zeros_like(delta)
    w = dy / r
    g2 = cotangent_grad(u2, w)
    g1 = cotangent_grad(u1, w)
    g_base = (g2 - g1) / d
    g_delta = g2 / d - ratio * delta / (d * d)
    return ratio, g_base, g_delta


def _active_engine(
    batch_outputs: Callable[[np.ndarray], np.ndarray],
    cotangent_grad: Callable[[np.ndarray, np.ndarray], np.ndarray],
    dim: int,
    cfg: ExplorationConfig,
    bounded: bool,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray, np.ndarray, int]:
    sigma = np.sqrt(cfg.perturbation_variance)
    box = cfg.perturbation_box
    best_L = -1.0
    best_pair = None
    evaluations = 0
    aborted = 0

    for _ in range(cfg.restarts):
        base0 = rng.uniform(-1.0, 1.0, size=dim)
        delta0 = rng.normal(0.0, sigma, size=dim)
        if bounded:
            # Optimize free variables; base = tanh(pb), delta = box * tanh(pd).
            pb = np.arctanh(np.clip(base0, -0.999, 0.999))
            pd = np.arctanh(np.clip(delta0 / box, -0.999, 0.999))
            params = [pb, pd]
        else:
            params = [base0, delta0]

        adam = Adam([p.shape for p in params], step_size=cfg.step_size)
        restart_best = -1.0
        stall = 0
        failed = False

        for _epoch in range(cfg.max_epochs):
            if bounded:
                tb, td = np.tanh(params[0]), np.tanh(params[1])
                base, delta = tb, box * td
            else:
                base, delta = params
            ratio, g_base, g_delta = _ratio_and_grads(batch_outputs, cotangent_grad, base, delta)
            evaluations += 1
            if not (np.isfinite(ratio) and np.all(np.isfinite(g_base)) and np.all(np.isfinite(g_delta))):
                failed = True
                break
            if ratio > best_L:
                best_L = ratio
                best_pair = (base.copy(), base + delta)
            if ratio > restart_best * (1.0 + IMPROVEMENT_RTOL):
                restart_best = ratio
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break
            if bounded:
                g_pb = g_base * (1.0 - tb * tb)
                g_pd = g_delta * box * (1.0 - td * td)
                grads = [g_pb, g_pd]
            else:
                grads = [g_base, g_delta]
            params = adam.step(params, [-g for g in grads])  # ascend

        if failed:
            aborted += 1

    if aborted == cfg.restarts:
        raise NumericalError("active exploration failed: every restart produced non-finite gradients")
    return best_L, best_pair[0], best_pair[1], evaluations


def random_explore(model: RnnModel, horizon: int, cfg: ExplorationConfig) -> EmpiricalResult:
    """Monte-Carlo lower bound: uniform [-1, 1] bases, Gaussian perturbations.

    Deterministic given cfg.seed; the maximizing pair is stored for replay.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    dim = model.input_dim(horizon)
    best, u1, u2, evals = _random_engine(_model_batch_outputs(model, horizon), dim, cfg, rng)
    return EmpiricalResult(L_emp=best, u1=u1, u2=u2, method=RANDOM, evaluations=evals, horizon=horizon)


def active_explore(
    model: RnnModel, horizon: int, cfg: ExplorationConfig, bounded: bool = False
) -> EmpiricalResult:
    """Gradient-ascent lower bound with several random restarts.

    Each restart ascends the sensitivity ratio via Adam using the analytic
    input gradient, and stops after ``patience`` epochs without relative
    improvement; the best pair seen anywhere is returned.  With ``bounded``
    the base stays in [-1, 1] and the perturbation inside the configured box.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1 if not bounded else 2]))
    dim = model.input_dim(horizon)
    best, u1, u2, evals = _active_engine(
        _model_batch_outputs(model, horizon),
        _model_cotangent_grad(model, horizon),
        dim, cfg, bounded, rng,
    )
    method = ACTIVE_BOUNDED if bounded else ACTIVE
    return EmpiricalResult(L_emp=best, u1=u1, u2=u2, method=method, evaluations=evals, horizon=horizon)


def sequence_vs_pointwise_demo(du, dy) -> tuple[float, list[float]]:
    """Contrast the sequence-norm ratio with causal per-step ratios.

    Given per-step input deviations du and output deviations dy, returns
    (L_seq, [L_1, ..., L_N]) where L_seq = ||dy|| / ||du|| over the stacked
    sequences and L_t = ||dy_t|| / ||du_{1:t}|| uses only the causal input
    prefix.  Early steps can show L_t well above L_seq: the sequence
    denominator contains future inputs that cannot influence them.
    """
    du = np.asarray(du, dtype=float)
    dy = np.asarray(dy, dtype=float)
    if du.ndim == 1:
        du = du[:, None]
    if dy.ndim == 1:
        dy = dy[:, None]
    if du.shape[0] != dy.shape[0] or du.shape[0] == 0:
        raise ContractError("du and dy must cover the same nonzero number of steps")

    seq_den = float(np.linalg.norm(du))
    if seq_den == 0.0:
        raise ContractError("zero input deviation")
    L_seq = float(np.linalg.norm(dy)) / seq_den

    per_step = []
    for t in range(du.shape[0]):
        den = float(np.linalg.norm(du[: t + 1]))
        if den == 0.0:
            raise ContractError(f"zero input deviation over the first {t + 1} steps")
        per_step.append(float(np.linalg.norm(dy[t])) / den)
    return L_seq, per_step


def replay(model: RnnModel, result: EmpiricalResult) -> float:
    """Recompute the stored result's ratio from its argmax pair."""
    return l_emp(model, result.u1, result.u2, result.horizon)
