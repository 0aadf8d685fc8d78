"""Stability-regularized RNN training on tank sequence data.

The objective is a washout mean squared error on the outputs plus a leaky
penalty on the spectral norm of the recurrent matrix,

    loss = mse(outputs after washout) + lrelu(||W_h||_2 - 1),
    lrelu(s) = a1 * s if s >= 0 else a2 * s,   a1 >> a2,

which strongly penalizes ||W_h||_2 > 1 (the condition for a finite
horizon-independent sensitivity) while barely rewarding further shrinkage.
Gradients are exact backpropagation through time; the spectral-norm term uses
the rank-1 subgradient a * u1 v1^T built from the leading singular pair of
the power iteration.  Training is plain Adam with early stopping on the
validation accuracy loss, and only snapshots satisfying ||W_h||_2 < 1 are
eligible to be returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import RnnModel
from .optim import Adam
from .tanks import SequenceDataset

PARAM_ORDER = ("W_x", "W_h", "b", "W_out", "b_out")


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 8
    washout: int = 25
    a1: float = 100.0
    a2: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0
    power_iterations: int = 50
    power_tol: float = 1e-8

    def __post_init__(self):
        if self.hidden < 1:
            raise ContractError("hidden width must be >= 1")
        if self.a2 <= 0 or self.a1 / self.a2 < 100.0:
            raise ContractError("penalty slopes must satisfy a1/a2 >= 100 with a2 > 0")
        if self.washout < 0:
            raise ContractError("washout must be nonnegative")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ContractError("patience, max_epochs and batch_size must be positive")


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    spectral_norms: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1
    norm_condition_met: bool = False

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "spectral_norms": self.spectral_norms,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "norm_condition_met": self.norm_condition_met,
        }


def _power_triple(W: np.ndarray, iters: int, tol: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Leading (sigma, u, v) of W by power iteration on W^T W.

    The start vector is drawn from a fixed-seed generator so repeated calls
    are deterministic; ties between singular values resolve to the iteration's
    convergence point.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ContractError("spectral_norm expects a square matrix")
    if not np.all(np.isfinite(W)):
        raise ContractError("matrix entries must be finite")
    n = W.shape[0]
    v = np.random.default_rng(0x5EED).normal(size=n)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = W.T @ (W @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, np.zeros(n), v
        v_new = w / norm
        # Converge on the vector, not the value: the subgradient needs
        # accurate singular vectors, whose error decays like sqrt of the
        # value's.  Sign-align first, eigendirections are sign-free.
        if np.linalg.norm(v_new - np.sign(v_new @ v) * v) <= tol:
            v = v_new
            break
        v = v_new
    u = W @ v
    sigma = float(np.linalg.norm(u))
    u = u / sigma if sigma > 0 else u
    return sigma, u, v


def spectral_norm(W: np.ndarray, iters: int = 50, tol: float = 1e-8) -> float:
    """Largest singular value via power iteration with a deterministic start."""
    return _power_triple(W, iters, tol)[0]


def _lrelu(s: float, a1: float, a2: float) -> float:
    return a1 * s if s >= 0 else a2 * s


def loss_stability(model_or_Wh, cfg: TrainConfig) -> float:
    """Leaky penalty on ||W_h||_2 - 1."""
    W_h = model_or_Wh.W_h if isinstance(model_or_Wh, RnnModel) else np.asarray(model_or_Wh)
    s = spectral_norm(W_h, cfg.power_iterations, cfg.power_tol) - 1.0
    return _lrelu(s, cfg.a1, cfg.a2)


def _forward(params: dict, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward pass from zero initial state.

    U: (batch, T, m).  Returns hidden states (batch, T+1, n) and outputs
    (batch, T, p).
    """
    B, T, _ = U.shape
    n = params["W_h"].shape[0]
    p = params["W_out"].shape[0]
    H = np.zeros((B, T + 1, n))
    Y = np.empty((B, T, p))
    h = np.zeros((B, n))
    for t in range(T):
        h = np.tanh(h @ params["W_h"].T + U[:, t] @ params["W_x"].T + params["b"])
        H[:, t + 1] = h
        Y[:, t] = h @ params["W_out"].T + params["b_out"]
    return H, Y


def _accuracy_loss_and_grads(
    params: dict, U: np.ndarray, Y_target: np.ndarray, washout: int,
    want_grads: bool = True,
) -> tuple[float, dict | None]:
    """Washout MSE and its exact BPTT gradients.

    The loss averages squared errors over timesteps >= washout, the batch,
    and the output channels.
    """
    B, T, _ = U.shape
    if washout >= T:
        raise ContractError(f"washout {washout} must be smaller than sequence length {T}")
    H, Y = _forward(params, U)
    count = (T - washout) * B * Y.shape[2]
    err = Y - Y_target
    err[:, :washout] = 0.0
    loss = float(np.sum(err * err) / count)
    if not want_grads:
        return loss, None

    dY = 2.0 * err / count
    g = {k: np.zeros_like(params[k]) for k in PARAM_ORDER}
    # Output layer accumulates over all (batch, t) pairs at once.
    flatY = dY.reshape(-1, dY.shape[2])
    flatH = H[:, 1:].reshape(-1, H.shape[2])
    g["W_out"] = flatY.T @ flatH
    g["b_out"] = flatY.sum(axis=0)

    dh_next = np.zeros((B, H.shape[2]))
    for t in range(T, 0, -1):
        dh = dY[:, t - 1] @ params["W_out"] + dh_next
        dv = dh * (1.0 - H[:, t] * H[:, t])
        g["W_x"] += dv.T @ U[:, t - 1]
        g["W_h"] += dv.T @ H[:, t - 1]
        g["b"] += dv.sum(axis=0)
        dh_next = dv @ params["W_h"]
    return loss, g


def loss_accuracy(model: RnnModel, batch: tuple[np.ndarray, np.ndarray], washout: int) -> float:
    """Washout MSE of the model on a (inputs, targets) batch."""
    U, Y = batch
    U = np.asarray(U, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if U.ndim == 2:
        U, Y = U[None], Y[None]
    params = {k: getattr(model, k) for k in PARAM_ORDER}
    loss, _ = _accuracy_loss_and_grads(params, U, Y, washout, want_grads=False)
    return loss


def _stability_loss_and_grad(W_h: np.ndarray, cfg: TrainConfig) -> tuple[float, np.ndarray]:
    sigma, u, v = _power_triple(W_h, cfg.power_iterations, cfg.power_tol)
    s = sigma - 1.0
    slope = cfg.a1 if s >= 0 else cfg.a2
    return _lrelu(s, cfg.a1, cfg.a2), slope * np.outer(u, v)


def _init_params(cfg: TrainConfig, m: int, p: int, rng: np.random.Generator) -> dict:
    n = cfg.hidden
    W_x = rng.normal(0.0, 1.0 / np.sqrt(m), size=(n, m))
    W_h = rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, n))
    sigma = spectral_norm(W_h, cfg.power_iterations, cfg.power_tol)
    if sigma > 0:
        W_h *= 0.7 / sigma  # start safely inside the stable region
    W_out = rng.normal(0.0, 1.0 / np.sqrt(n), size=(p, n))
    return {
        "W_x": W_x,
        "W_h": W_h,
        "b": np.zeros(n),
        "W_out": W_out,
        "b_out": np.zeros(p),
    }


def train(dataset: SequenceDataset, cfg: TrainConfig) -> tuple[RnnModel, TrainingLog]:
    """Fit an RnnModel on the dataset's training split.

    Minimizes the accuracy loss plus the stability penalty with Adam; early
    stopping watches the validation accuracy loss only, and the run ends once
    it has not improved for ``patience`` epochs while ||W_h||_2 < 1 holds.
    Returns the best-validation snapshot satisfying the norm condition;
    if no epoch satisfied it, the best overall snapshot is returned with
    log.norm_condition_met = False.  Deterministic for a fixed seed.
    """
    train_u, train_y = dataset.train
    val_u, val_y = dataset.val
    if train_u.shape[0] == 0:
        raise ContractError("training split is empty")
    T = train_u.shape[1]
    if cfg.washout >= T:
        raise ContractError(f"washout {cfg.washout} must be smaller than sequence length {T}")
    m = train_u.shape[2]
    p = train_y.shape[2]

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    params = _init_params(cfg, m, p, rng)
    adam = Adam([params[k].shape for k in PARAM_ORDER], step_size=cfg.learning_rate)
    log = TrainingLog()

    best_val = np.inf
    best_params = None
    fallback_val = np.inf
    fallback_params = {k: v.copy() for k, v in params.items()}
    prev_val = np.inf
    stall = 0

    n_train = train_u.shape[0]
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            loss_ac, grads = _accuracy_loss_and_grads(params, train_u[idx], train_y[idx], cfg.washout)
            loss_st, g_st = _stability_loss_and_grad(params["W_h"], cfg)
            grads["W_h"] = grads["W_h"] + g_st
            epoch_loss += (loss_ac + loss_st) * idx.shape[0]
            flat = adam.step([params[k] for k in PARAM_ORDER], [grads[k] for k in PARAM_ORDER])
            params = dict(zip(PARAM_ORDER, flat))
        epoch_loss /= n_train

        val_loss, _ = _accuracy_loss_and_grads(params, val_u, val_y, cfg.washout, want_grads=False)
        sigma = spectral_norm(params["W_h"], cfg.power_iterations, cfg.power_tol)
        log.train_loss.append(epoch_loss)
        log.val_loss.append(float(val_loss))
        log.spectral_norms.append(float(sigma))

        if val_loss < fallback_val:
            fallback_val = val_loss
            fallback_params = {k: v.copy() for k, v in params.items()}
        if sigma < 1.0 and val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            log.best_epoch = epoch
        # Patience counts consecutive epochs that fail to improve on their
        # predecessor; a single noisy dip does not end a run that is still
        # making progress overall.
        if val_loss < prev_val:
            stall = 0
        else:
            stall += 1
        prev_val = val_loss
        if stall >= cfg.patience and sigma < 1.0 and best_params is not None:
            log.stopped_epoch = epoch
            break
    else:
        log.stopped_epoch = cfg.max_epochs - 1

    if best_params is not None:
        chosen = best_params
        log.norm_condition_met = True
    else:
        chosen = fallback_params
        log.norm_condition_met = False
    model = RnnModel(
        W_x=chosen["W_x"], W_h=chosen["W_h"], b=chosen["b"],
        W_out=chosen["W_out"], b_out=chosen["b_out"],
    )
    return model, log
