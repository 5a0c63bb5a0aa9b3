"""Single-agent comparison policies: Neural UCB/TS and Linear UCB/TS."""

from __future__ import annotations

import math

import numpy as np

from . import network as nw
from .agent import ArmChoice
from .stats import CovarianceState, mahalanobis_with

KINDS = ("neural-ucb", "neural-ts", "linear-ucb", "linear-ts")


class BaselinePolicy:
    """A non-communicating policy over either tangent features or raw contexts.

    Neural kinds score with the trained network plus a tangent-feature
    bonus and retrain after every observation (until the training cutoff).
    Linear kinds run ridge regression on raw contexts when ``raw_context``
    is set, otherwise on tangent features at ``theta0``.
    """

    def __init__(self, kind: str, shape: nw.NetworkShape, theta0: np.ndarray, lam: float = 0.1,
                 nu: float = 0.1, mode: str = "full", raw_context: bool = True,
                 train: nw.TrainConfig | None = None, rng=None, refresh_every: int = 512):
        if kind not in KINDS:
            raise ValueError(f"unknown baseline {kind!r}; expected one of {KINDS}")
        self.kind = kind
        self.shape = shape
        self.theta0 = theta0
        self.lam = lam
        self.nu = nu
        self.neural = kind.startswith("neural")
        self.raw = raw_context and not self.neural
        self.train_cfg = train or nw.TrainConfig(lam=lam)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        dim = shape.d if self.raw else shape.p0
        self.cov = CovarianceState(dim, lam, mode, refresh_every)
        self.b = np.zeros(dim)
        self.theta = theta0.copy()
        self._trained = False
        self.hist_x: list[np.ndarray] = []
        self.hist_y: list[float] = []
        self._last_feat = None

    def features(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.raw:
            return np.asarray(X, dtype=np.float64)
        return nw.tangent_feature(self.shape, self.theta0, X)

    def select_arm(self, X, t: int) -> ArmChoice:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        feat = self.features(X)
        self._last_feat = feat
        width = math.sqrt(self.lam) * mahalanobis_with(self.cov.inv, feat)
        if self.neural:
            mean = nw.forward(self.shape, self.theta, X)
        else:
            mean = feat @ self.cov.solve(self.b)
        if self.kind.endswith("ucb"):
            score = mean + self.nu * width
        else:
            score = mean + self.nu * width * self.rng.standard_normal(len(mean))
        k = int(np.argmax(score))
        return ArmChoice(k, X[k], score, None, score, 0.0)

    def observe(self, x, y: float, t: int, feat=None) -> None:
        feat = self.features(x)[0] if feat is None else feat
        self.cov.update(feat)
        self.b += y * feat
        self.hist_x.append(np.asarray(x, dtype=np.float64))
        self.hist_y.append(float(y))
        if self.neural:
            tc = self.train_cfg
            if tc.cutoff is None or t <= tc.cutoff:
                warm = self.theta if (tc.warm_start and self._trained) else None
                self.theta = nw.train_local(self.shape, self.theta0, np.asarray(self.hist_x),
                                            np.asarray(self.hist_y), tc, warm_start=warm, rng=self.rng)
                self._trained = True


def baseline_select(policy: BaselinePolicy, contexts, t: int = 0) -> ArmChoice:
    return policy.select_arm(contexts, t)
