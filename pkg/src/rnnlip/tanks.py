"""Cascaded multi-tank simulator and normalized sequence dataset generation.

Tank 0 receives only its inflow; every later tank additionally receives the
outflow of its predecessor.  With step size dt the discrete update is

    h'_0 = h_0 + dt * (u_0 - a_0 sqrt(h_0))
    h'_i = h_i + dt * (u_i + a_{i-1} sqrt(h_{i-1}) - a_i sqrt(h_i)),  i > 0

with levels clamped at zero from below (the explicit update can undershoot,
and the square root is undefined for negative levels).

Datasets consist of seeded piecewise-constant inflow profiles, the simulated
level trajectories, and per-channel min-max normalization to [-1, 1] fitted
on the training split only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

HOLD_RANGE = (5, 20)  # piecewise-constant inflow hold lengths, in steps


@dataclass(frozen=True)
class TankConfig:
    tanks: int = 3
    a: tuple[float, ...] | None = None          # outflow coefficients; default 0.3 per tank
    dt: float = 1.0
    sequence_length: int = 100
    sequences: int = 1000
    split: float = 0.7
    input_range: tuple[float, float] = (0.0, 0.5)
    init_level_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.tanks < 1:
            raise ContractError("need at least one tank")
        a = self.a if self.a is not None else tuple(0.3 for _ in range(self.tanks))
        a = tuple(float(v) for v in a)
        if len(a) != self.tanks:
            raise ContractError(f"need {self.tanks} outflow coefficients, got {len(a)}")
        if any(v <= 0 for v in a):
            raise ContractError("outflow coefficients must be positive")
        object.__setattr__(self, "a", a)
        if self.dt <= 0:
            raise ContractError("dt must be positive")
        if not (0.0 < self.split < 1.0):
            raise ContractError("split must lie strictly between 0 and 1")
        lo, hi = self.input_range
        if lo < 0 or hi < lo:
            raise ContractError("input_range must be nonnegative and ordered")
        if self.sequence_length < 1 or self.sequences < 1:
            raise ContractError("sequence_length and sequences must be positive")

    def to_dict(self) -> dict:
        return {
            "tanks": self.tanks,
            "a": list(self.a),
            "dt": self.dt,
            "sequence_length": self.sequence_length,
            "sequences": self.sequences,
            "split": self.split,
            "input_range": list(self.input_range),
            "init_level_range": list(self.init_level_range),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TankConfig":
        return cls(
            tanks=obj["tanks"],
            a=tuple(obj["a"]),
            dt=obj["dt"],
            sequence_length=obj["sequence_length"],
            sequences=obj["sequences"],
            split=obj["split"],
            input_range=tuple(obj["input_range"]),
            init_level_range=tuple(obj.get("init_level_range", (0.0, 1.0))),
            seed=obj["seed"],
        )


@dataclass(frozen=True)
class Normalization:
    """Per-channel affine map raw -> (raw - offset) / scale into [-1, 1]."""

    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalization":
        """Fit min-max normalization over all leading axes of (..., channels)."""
        flat = data.reshape(-1, data.shape[-1])
        lo = flat.min(axis=0)
        hi = flat.max(axis=0)
        offset = (hi + lo) / 2.0
        scale = np.maximum((hi - lo) / 2.0, 1e-12)
        return cls(offset=offset, scale=scale)

    def normalize(self, data: np.ndarray) -> np.ndarray:
        return (data - self.offset) / self.scale

    def denormalize(self, data: np.ndarray) -> np.ndarray:
        return data * self.scale + self.offset

    def to_dict(self) -> dict:
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Normalization":
        return cls(offset=np.asarray(obj["offset"], dtype=float),
                   scale=np.asarray(obj["scale"], dtype=float))


@dataclass
class SequenceDataset:
    """Normalized input/output trajectories with their normalization metadata.

    inputs/outputs have shape (sequences, length, tanks) in normalized units;
    train_idx/val_idx index into the leading axis.
    """

    config: TankConfig
    inputs: np.ndarray
    outputs: np.ndarray
    u_norm: Normalization
    y_norm: Normalization
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.train_idx], self.outputs[self.train_idx]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.val_idx], self.outputs[self.val_idx]


def tank_step(cfg: TankConfig, h: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One discrete update; works on (..., tanks) batches, clamps at zero."""
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    if h.shape[-1] != cfg.tanks or u.shape[-1] != cfg.tanks:
        raise ContractError(f"levels and inflows must have {cfg.tanks} channels")
    if np.any(h < 0):
        raise ContractError("levels must be nonnegative")
    if np.any(u < 0):
        raise ContractError("inflows must be nonnegative")
    a = np.asarray(cfg.a)
    out = a * np.sqrt(h)
    delta = u - out
    delta[..., 1:] += out[..., :-1]
    return np.maximum(h + cfg.dt * delta, 0.0)


def simulate(cfg: TankConfig, h_init: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Iterate tank_step over an input sequence.

    Args:
        h_init: initial levels, shape (tanks,) or (batch, tanks).
        inputs: inflows, shape (T, tanks) or (batch, T, tanks).

    Returns:
        Levels after each step, same leading shape as inputs.
    """
    inputs = np.asarray(inputs, dtype=float)
    squeeze = inputs.ndim == 2
    if squeeze:
        inputs = inputs[None]
        h_init = np.asarray(h_init, dtype=float)[None]
    T = inputs.shape[1]
    levels = np.empty_like(inputs)
    h = np.asarray(h_init, dtype=float)
    for t in range(T):
        h = tank_step(cfg, h, inputs[:, t])
        levels[:, t] = h
    return levels[0] if squeeze else levels


def steady_state(cfg: TankConfig, u: np.ndarray) -> np.ndarray:
    """Analytic fixed point for constant inflows: each tank balances its
    total inflow against a_i sqrt(h_i)."""
    u = np.asarray(u, dtype=float)
    h = np.empty(cfg.tanks)
    carry = 0.0
    for i in range(cfg.tanks):
        flow = u[i] + carry
        h[i] = (flow / cfg.a[i]) ** 2
        carry = flow  # at steady state the outflow equals the total inflow
    return h


def _piecewise_constant(rng: np.random.Generator, length: int, channels: int,
                        lo: float, hi: float) -> np.ndarray:
    profile = np.empty((length, channels))
    for c in range(channels):
        t = 0
        while t < length:
            hold = int(rng.integers(HOLD_RANGE[0], HOLD_RANGE[1] + 1))
            profile[t: t + hold, c] = rng.uniform(lo, hi)
            t += hold
    return profile


def generate_dataset(cfg: TankConfig) -> SequenceDataset:
    """Simulate seeded random inflow profiles and build the normalized dataset.

    Profiles are piecewise constant (holds of 5..20 steps, levels uniform in
    the input range) for excitation across frequencies; sequences are
    shuffled, split, and normalized per channel using training data only.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    S, T, k = cfg.sequences, cfg.sequence_length, cfg.tanks
    lo, hi = cfg.input_range

    raw_u = np.empty((S, T, k))
    for s in range(S):
        raw_u[s] = _piecewise_constant(rng, T, k, lo, hi)
    h0 = rng.uniform(cfg.init_level_range[0], cfg.init_level_range[1], size=(S, k))
    raw_y = simulate(cfg, h0, raw_u)

    order = rng.permutation(S)
    n_train = int(round(cfg.split * S))
    train_idx = np.sort(order[:n_train])
    val_idx = np.sort(order[n_train:])

    u_norm = Normalization.fit(raw_u[train_idx])
    y_norm = Normalization.fit(raw_y[train_idx])
    return SequenceDataset(
        config=cfg,
        inputs=u_norm.normalize(raw_u),
        outputs=y_norm.normalize(raw_y),
        u_norm=u_norm,
        y_norm=y_norm,
        train_idx=train_idx,
        val_idx=val_idx,
    )


def dataset_to_dict(ds: SequenceDataset) -> dict:
    def records(idx):
        return [
            {"u": ds.inputs[i].tolist(), "y": ds.outputs[i].tolist()}
            for i in idx
        ]

    return {
        "config": ds.config.to_dict(),
        "normalization": {"u": ds.u_norm.to_dict(), "y": ds.y_norm.to_dict()},
        "train": records(ds.train_idx),
        "val": records(ds.val_idx),
    }


def dataset_from_dict(obj: dict) -> SequenceDataset:
    cfg = TankConfig.from_dict(obj["config"])
    train_u = np.asarray([r["u"] for r in obj["train"]], dtype=float)
    train_y = np.asarray([r["y"] for r in obj["train"]], dtype=float)
    val_u = np.asarray([r["u"] for r in obj["val"]], dtype=float)
    val_y = np.asarray([r["y"] for r in obj["val"]], dtype=float)
    inputs = np.concatenate([train_u, val_u], axis=0)
    outputs = np.concatenate([train_y, val_y], axis=0)
    n_train = train_u.shape[0]
    return SequenceDataset(
        config=cfg,
        inputs=inputs,
        outputs=outputs,
        u_norm=Normalization.from_dict(obj["normalization"]["u"]),
        y_norm=Normalization.from_dict(obj["normalization"]["y"]),
        train_idx=np.arange(n_train),
        val_idx=np.arange(n_train, inputs.shape[0]),
    )


def save_dataset(ds: SequenceDataset, path: str | Path, extra: dict | None = None) -> None:
    obj = dataset_to_dict(ds)
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> SequenceDataset:
    return dataset_from_dict(json.loads(Path(path).read_text()))
