import numpy as np
import pytest

from rnnlip import RnnModel


def make_model(rng: np.random.Generator, n: int = 3, m: int = 2, p: int = 2,
               w_scale: float = 1.0, wh_spectral: float | None = None) -> RnnModel:
    """Random model with optional rescaling of W_h to a target spectral norm."""
    W_x = rng.uniform(-w_scale, w_scale, size=(n, m))
    W_h = rng.uniform(-w_scale, w_scale, size=(n, n))
    if wh_spectral is not None:
        sigma = np.linalg.norm(W_h, 2)
        if sigma > 0:
            W_h = W_h * (wh_spectral / sigma)
    b = rng.uniform(-0.5, 0.5, size=n)
    W_out = rng.uniform(-w_scale, w_scale, size=(p, n))
    b_out = rng.uniform(-0.5, 0.5, size=p)
    return RnnModel(W_x=W_x, W_h=W_h, b=b, W_out=W_out, b_out=b_out)


def scalar_grid_oracle(w_x: float, w_h: float, b: float, w_out: float,
                       lim: float = 6.0, points: int = 12001) -> float:
    """Supremum of |w_out| * tanh'(v) * ||(w_x, w_h)|| over the (x, h0) grid.

    Exact evaluation of the grid supremum: tanh' is even and decreasing in
    |v|, so it suffices to minimize |v| = |w_x x + w_h h + b| over the grid;
    for each grid x the V-shaped |affine in h| attains its grid minimum at a
    rounding neighbor of the real minimizer (or at the clipped boundary).
    """
    step = 2 * lim / (points - 1)
    xs = np.linspace(-lim, lim, points)
    if abs(w_h) < 1e-15:
        vmin = np.abs(w_x * xs + b).min()
    else:
        target = -(w_x * xs + b) / w_h
        idx = np.clip(np.round((target + lim) / step).astype(np.int64), 0, points - 1)
        vmin = np.inf
        for off in (-1, 0, 1):
            hs = -lim + np.clip(idx + off, 0, points - 1) * step
            vmin = min(vmin, np.abs(w_x * xs + w_h * hs + b).min())
    return abs(w_out) * np.hypot(w_x, w_h) / np.cosh(vmin) ** 2


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
