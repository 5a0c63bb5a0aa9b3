"""A single federated agent: arm selection with two UCBs, local statistics and sync packets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from .packets import AgentUpload, PacketError, ServerBroadcast
from .stats import CovarianceState, StatsError, mahalanobis_with


class NotReadyError(RuntimeError):
    pass


ALPHA_MODES = ("computed", "ramp", "constant")


@dataclass
class AgentConfig:
    """Per-agent algorithm settings.

    ``nu_a`` scales the exploration term of the pooled linear bound and
    ``nu_b`` that of the aggregated-network bound. ``alpha_mode`` selects how
    the weight between them is obtained: from the server (``computed``), a
    linear ramp reaching 1 at ``alpha_ramp`` (``ramp``) or ``alpha_value``
    (``constant``).
    """

    lam: float = 0.1
    nu_a: float = 0.1
    nu_b: float = 0.1
    mode: str = "full"
    simplified: bool = False
    alpha_mode: str = "computed"
    alpha_ramp: int = 700
    alpha_value: float = 0.0
    rescale: bool | None = None
    aggregate_params: bool = True
    sync_check_diag: bool = True
    alpha_condition: str = "current"
    warm_start_from: str = "local"
    refresh_every: int = 512
    train: nw.TrainConfig = field(default_factory=nw.TrainConfig)

    def __post_init__(self):
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.alpha_condition not in ("current", "epoch"):
            raise ValueError("alpha_condition must be 'current' or 'epoch'")
        if self.warm_start_from not in ("local", "sync"):
            raise ValueError("warm_start_from must be 'local' or 'sync'")
        if not 0.0 <= self.alpha_value <= 1.0:
            raise ValueError("alpha_value must lie in [0, 1]")

    @property
    def use_rescale(self) -> bool:
        return self.mode == "diag" if self.rescale is None else self.rescale


@dataclass
class ArmChoice:
    index: int
    context: np.ndarray
    ucb_a: np.ndarray
    ucb_b: np.ndarray | None
    combined: np.ndarray
    alpha: float


def minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


class Agent:
    def __init__(self, agent_id: int, shape: nw.NetworkShape, theta0: np.ndarray, cfg: AgentConfig,
                 reference_features: np.ndarray | None = None, rng=None):
        self.id = agent_id
        self.shape = shape
        self.theta0 = theta0
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(agent_id)
        p, lam, mode = shape.p0, cfg.lam, cfg.mode
        self.p0 = p

        self.W_sync = np.zeros((p, p)) if mode == "full" else np.zeros(p)
        self.B_sync = np.zeros(p)
        self.W_new = np.zeros_like(self.W_sync)
        self.B_new = np.zeros(p)
        self.vbar = CovarianceState(p, lam, mode, cfg.refresh_every)
        self.v_local = CovarianceState(p, lam, mode, cfg.refresh_every)
        self.logdet_last = self.vbar.logdet
        self.theta_sync = theta0.copy()
        self.v_sync_inv = self.vbar.inv.copy()
        self.alpha = 0.0
        self.t_last = 0
        self.synced = False

        self.theta_local = theta0.copy()
        self._trained = False
        self.hist_x: list[np.ndarray] = []
        self.hist_y: list[float] = []
        self.ref = reference_features
        self._last_phi: np.ndarray | None = None
        self._local_inv_at_sync = self.v_local.inv.copy()
        self._uploaded_inv = self.v_local.inv.copy()

    # -- features -----------------------------------------------------------

    def features(self, X) -> np.ndarray:
        return nw.tangent_feature(self.shape, self.theta0, np.atleast_2d(X))

    # -- the two bounds -----------------------------------------------------

    def theta_bar(self) -> np.ndarray:
        return self.vbar.solve(self.B_sync + self.B_new)

    def ucb_a(self, X, phi=None, parts: bool = False):
        phi = self.features(X) if phi is None else phi
        mean = phi @ self.theta_bar()
        bonus = self.cfg.nu_a * math.sqrt(self.cfg.lam) * mahalanobis_with(self.vbar.inv, phi)
        return (mean, bonus) if parts else mean + bonus

    def ucb_b(self, X, phi=None):
        if not self.synced:
            raise NotReadyError("ucb_b needs at least one communication round")
        X = np.atleast_2d(X)
        phi = self.features(X) if phi is None else phi
        pred = nw.forward(self.shape, self.theta_sync, X)
        return pred + self.cfg.nu_b * math.sqrt(self.cfg.lam) * mahalanobis_with(self.v_sync_inv, phi)

    def alpha_at(self, t: int) -> float:
        if not self.synced:
            return 0.0
        if self.cfg.simplified and t != self.t_last + 1:
            return 0.0
        if self.cfg.alpha_mode == "ramp":
            return min(1.0, t / self.cfg.alpha_ramp)
        if self.cfg.alpha_mode == "constant":
            return self.cfg.alpha_value
        return self.alpha

    def select_arm(self, X, t: int) -> ArmChoice:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("empty context set")
        phi = self.features(X)
        self._last_phi = phi
        mean, bonus = self.ucb_a(X, phi, parts=True)
        if self.cfg.use_rescale:
            mean = minmax(mean)
        ua = mean + bonus
        alpha = self.alpha_at(t)
        if alpha != 0.0:
            ub = self.ucb_b(X, phi)
            combined = (1.0 - alpha) * ua + alpha * ub
        else:
            ub = None
            combined = ua
        k = int(np.argmax(combined))
        return ArmChoice(k, X[k], ua, ub, combined, alpha)

    # -- local updates ------------------------------------------------------

    def observe(self, x, y: float, phi=None) -> None:
        if not np.isfinite(y):
            raise ValueError("non-finite observation")
        x = np.asarray(x, dtype=np.float64)
        phi = self.features(x)[0] if phi is None else phi
        if self.cfg.mode == "full":
            self.W_new += np.outer(phi, phi)
        else:
            self.W_new += phi * phi
        self.B_new += y * phi
        self.vbar.update(phi)
        self.v_local.update(phi)
        self.hist_x.append(x)
        self.hist_y.append(float(y))

    def logdet_growth(self) -> float:
        """log det(lam I + W_sync + W_new) - log det(V_last), diagonalized if configured."""
        if self.cfg.sync_check_diag:
            if self.cfg.mode == "full":
                ws, wn = np.diag(self.W_sync), np.diag(self.W_new)
            else:
                ws, wn = self.W_sync, self.W_new
            return float(np.sum(np.log1p(wn / (ws + self.cfg.lam))))
        return max(self.vbar.logdet - self.logdet_last, 0.0)

    def sync_value(self, t: int) -> float:
        return (t - self.t_last) * self.logdet_growth()

    def sync_check(self, t: int, D: float) -> bool:
        if t < self.t_last:
            raise ValueError("t precedes the last sync")
        return self.sync_value(t) > D

    def compute_alpha_local(self, reference=None) -> float:
        """min / max of the local posterior deviation over the reference features."""
        parts = []
        ref = self.ref if reference is None else reference
        if ref is not None and len(ref):
            parts.append(ref)
        if reference is None and self._last_phi is not None:
            parts.append(self._last_phi)
        if not parts:
            raise ValueError("alpha needs a non-empty reference set")
        feats = np.concatenate(parts) if len(parts) > 1 else parts[0]
        inv = self._local_inv_at_sync if self.cfg.alpha_condition == "epoch" else self.v_local.inv
        sig = math.sqrt(self.cfg.lam) * mahalanobis_with(inv, feats)
        hi = float(np.max(sig))
        if hi <= 0.0:
            raise StatsError("largest posterior deviation is zero")
        return float(np.clip(np.min(sig) / hi, 0.0, 1.0))

    # -- communication ------------------------------------------------------

    def train(self, t: int) -> np.ndarray:
        tc = self.cfg.train
        if not self.hist_x or (tc.cutoff is not None and t > tc.cutoff):
            return self.theta_local
        warm = None
        if tc.warm_start and self._trained:
            warm = self.theta_sync if self.cfg.warm_start_from == "sync" else self.theta_local
        X = np.asarray(self.hist_x)
        y = np.asarray(self.hist_y)
        try:
            self.theta_local = nw.train_local(self.shape, self.theta0, X, y, tc, warm_start=warm, rng=self.rng)
        except nw.DivergenceError as exc:
            raise nw.DivergenceError(exc.step, f"agent {self.id}: training diverged at step {exc.step} (t={t})") from None
        self._trained = True
        return self.theta_local

    def build_upload(self, t: int) -> AgentUpload:
        theta = self.train(t)
        alpha = self.compute_alpha_local()
        inv = self.v_local.inv.copy()
        self._uploaded_inv = inv
        return AgentUpload(self.W_new.copy(), self.B_new.copy(), theta.copy(), inv, alpha, agent=self.id)

    def apply_broadcast(self, pkt: ServerBroadcast, t: int) -> None:
        try:
            pkt.validate(self.p0, self.cfg.mode)
        except PacketError as exc:
            raise PacketError(f"agent {self.id}: {exc}") from None
        self.W_sync = pkt.W
        self.B_sync = pkt.B
        if self.cfg.aggregate_params:
            self.theta_sync = pkt.theta
            self.v_sync_inv = pkt.inv
        else:
            self.theta_sync = self.theta_local.copy()
            self.v_sync_inv = self._uploaded_inv
        self.alpha = float(pkt.alpha)
        self.vbar = pkt.synced_state(self.cfg.lam, self.cfg.refresh_every)
        self.logdet_last = self.vbar.logdet
        self.W_new = np.zeros_like(self.W_new)
        self.B_new = np.zeros_like(self.B_new)
        self.t_last = t
        self.synced = True
        if self.cfg.alpha_condition == "epoch":
            self._local_inv_at_sync = self.v_local.inv.copy()
