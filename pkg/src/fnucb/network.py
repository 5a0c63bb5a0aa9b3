"""Fully connected ReLU network with symmetric initialization and analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Raised when local training produces non-finite parameters or loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


@dataclass(frozen=True)
class NetworkShape:
    d: int
    m: int
    L: int = 2

    def __post_init__(self):
        if self.L < 2:
            raise ShapeError(f"depth L must be >= 2, got {self.L}")
        if self.d < 2 or self.d % 2:
            raise ShapeError(f"input dim d must be even, got {self.d}")
        if self.m < 2 or self.m % 2:
            raise ShapeError(f"width m must be even, got {self.m}")

    @property
    def p0(self) -> int:
        return self.m * self.d + self.m * self.m * (self.L - 2) + self.m

    @property
    def offsets(self) -> np.ndarray:
        return _kernels.layer_offsets(self.d, self.m, self.L)

    def layers(self, theta: np.ndarray) -> list[np.ndarray]:
        """Views of the weight matrices inside a flat parameter vector."""
        self.check_params(theta)
        return _kernels._unpack(theta, self.d, self.m, self.L)

    def check_params(self, theta: np.ndarray) -> None:
        if theta.shape != (self.p0,):
            raise ShapeError(f"expected {self.p0} parameters, got shape {theta.shape}")

    def _contexts(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.d:
            raise ShapeError(f"context dim {X2.shape[1]} != network input dim {self.d}")
        return np.ascontiguousarray(X2), single


@dataclass
class TrainConfig:
    """Local training settings.

    ``batch_size=None`` means full-batch gradient descent. ``cutoff`` is the
    global iteration after which training is skipped.
    """

    lr: float = 0.01
    steps: int = 30
    lam: float = 0.1
    batch_size: int | None = None
    warm_start: bool = True
    cutoff: int | None = 2000

    def __post_init__(self):
        if self.lr <= 0 or self.steps < 0 or self.lam <= 0:
            raise ValueError("TrainConfig needs lr > 0, steps >= 0, lam > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def init_params(shape: NetworkShape, seed) -> np.ndarray:
    """Symmetric block initialization.

    Hidden layers are ``diag(W, W)`` with ``W ~ N(0, 4/m)`` and the output
    layer is ``(w, -w)`` with ``w ~ N(0, 2/m)``, so the network outputs exactly
    zero on inputs whose two halves coincide.
    """
    rng = np.random.default_rng(seed)
    d, m, L = shape.d, shape.m, shape.L
    h = m // 2
    theta = np.zeros(shape.p0)
    off = shape.offsets
    for l in range(L - 1):
        cols = d if l == 0 else m
        W = rng.normal(0.0, math.sqrt(4.0 / m), size=(h, cols // 2))
        full = np.zeros((m, cols))
        full[:h, : cols // 2] = W
        full[h:, cols // 2:] = W
        theta[off[l]:off[l + 1]] = full.ravel()
    w = rng.normal(0.0, math.sqrt(2.0 / m), size=h)
    theta[off[L - 1]:] = np.concatenate([w, -w])
    return theta


def forward(shape: NetworkShape, theta: np.ndarray, x) -> float | np.ndarray:
    """Network output for one context (scalar) or a batch of contexts (vector)."""
    shape.check_params(theta)
    X, single = shape._contexts(x)
    f = _kernels.forward_batch(theta, X, shape.d, shape.m, shape.L)
    return float(f[0]) if single else f


def gradient(shape: NetworkShape, theta: np.ndarray, x) -> np.ndarray:
    """df/dtheta, one row per context. ReLU'(0) is taken as 0."""
    shape.check_params(theta)
    X, single = shape._contexts(x)
    _, G = _kernels.grad_batch(theta, X, shape.d, shape.m, shape.L)
    return G[0] if single else G


def forward_and_gradient(shape: NetworkShape, theta: np.ndarray, x):
    shape.check_params(theta)
    X, single = shape._contexts(x)
    f, G = _kernels.grad_batch(theta, X, shape.d, shape.m, shape.L)
    return (float(f[0]), G[0]) if single else (f, G)


def tangent_feature(shape: NetworkShape, theta0: np.ndarray, x) -> np.ndarray:
    return gradient(shape, theta0, x) / math.sqrt(shape.m)


def objective(shape: NetworkShape, theta0: np.ndarray, theta: np.ndarray, X, y, lam: float) -> float:
    """sum (f - y)^2 / 2 + m * lam * ||theta - theta0||^2 / 2"""
    f = forward(shape, theta, np.atleast_2d(X))
    r = f - np.asarray(y, dtype=np.float64)
    diff = theta - theta0
    return 0.5 * float(r @ r) + 0.5 * shape.m * lam * float(diff @ diff)


def objective_grad(shape: NetworkShape, theta0: np.ndarray, theta: np.ndarray, X, y, lam: float) -> np.ndarray:
    f, G = forward_and_gradient(shape, theta, np.atleast_2d(X))
    r = f - np.asarray(y, dtype=np.float64)
    return r @ G + shape.m * lam * (theta - theta0)


def _batches(n: int, cfg: TrainConfig, rng) -> np.ndarray:
    if cfg.batch_size is None or cfg.batch_size >= n:
        return np.tile(np.arange(n, dtype=np.int64), (cfg.steps, 1))
    if rng is None:
        raise ValueError("stochastic training needs an rng")
    return rng.integers(0, n, size=(cfg.steps, cfg.batch_size))


def train_local(shape: NetworkShape, theta0: np.ndarray, X, y, cfg: TrainConfig,
                warm_start: np.ndarray | None = None, rng=None, return_losses: bool = False):
    """Gradient descent on the regularized squared loss anchored at ``theta0``.

    Steps descend the objective divided by the number of observations ``n``,
    i.e. ``mean (f - y)^2 / 2 + (m * lam / n) * ||theta - theta0||^2 / 2``.
    This has the same minimizer as the summed objective while keeping the
    step size meaningful as the history grows. With ``batch_size`` set, each
    step uses a uniformly drawn minibatch (with replacement) from ``rng``.
    """
    start = theta0 if warm_start is None else warm_start
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("train_local needs at least one observation")
    if X.shape[0] != y.shape[0]:
        raise ShapeError("X and y lengths differ")
    if X.shape[1] != shape.d:
        raise ShapeError(f"context dim {X.shape[1]} != network input dim {shape.d}")
    if cfg.steps == 0:
        out = start.copy()
        return (out, np.empty(0)) if return_losses else out
    n = X.shape[0]
    reg = shape.m * cfg.lam / n
    batches = _batches(n, cfg, rng)
    theta, losses = _kernels.train_steps(start, theta0, X, y, batches, cfg.lr, reg,
                                         shape.d, shape.m, shape.L)
    if len(losses) < cfg.steps or not np.isfinite(losses[-1]):
        raise DivergenceError(len(losses) - 1)
    return (theta, losses) if return_losses else theta
