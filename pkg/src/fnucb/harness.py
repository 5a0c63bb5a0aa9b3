"""Synchronous simulation loop for federated runs and single-agent baselines."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from .agent import Agent, AgentConfig
from .baselines import KINDS as BASELINE_KINDS, BaselinePolicy
from .environments import SyntheticEnv, ingest_dataset, keyed_rng
from .server import Server
from .stats import dense_inverse_logdet

log = logging.getLogger(__name__)

POLICIES = ("fn-ucb",) + BASELINE_KINDS
ENVS = ("cosine", "square", "shuttle", "magic", "dataset")

_THETA0_STREAM = 0x10
_AGENT_STREAM = 0x20
_REFERENCE_STREAM = 0x30

TRACE_COLUMNS = ("t", "agent", "regret", "cum_regret", "alpha", "round_flag", "policy", "seed")


class RunError(RuntimeError):
    def __init__(self, t: int, message: str):
        self.t = t
        super().__init__(f"iteration {t}: {message}")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run.

    ``lam=None`` resolves to ``1 + 2/T``. ``batch_size=0`` means full-batch
    training and ``train_cutoff=0`` disables the cutoff. ``D=inf`` turns
    communication off.
    """

    policy: str = "fn-ucb"
    env: str = "cosine"
    T: int = 2000
    N: int = 1
    K: int = 4
    d: int = 10
    sigma: float = 0.01
    dataset_path: str = ""
    dataset_schema: str = ""
    normalize: bool = True
    duplicate: bool = False
    D: float = 0.0
    lam: float | None = None
    nu_a: float = 0.1
    nu_b: float = 0.1
    m: int = 20
    L: int = 2
    lr: float = 0.01
    train_steps: int = 30
    batch_size: int = 0
    warm_start: bool = True
    train_cutoff: int = 2000
    diag: bool = False
    simplified: bool = False
    alpha_mode: str = "computed"
    alpha_ramp: int = 700
    alpha_value: float = 0.0
    rescale: bool | None = None
    aggregate_params: bool = True
    sync_check_diag: bool = True
    alpha_condition: str = "current"
    warm_start_from: str = "local"
    alpha_ref_size: int = 256
    raw_context: bool = True
    seed: int = 0
    record_snapshots: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("T", "N", "m", "L", "alpha_ramp"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.env not in ENVS:
            raise ValueError(f"unknown env {self.env!r}; expected one of {ENVS}")
        if self.env in ("cosine", "square") and (self.K < 1 or self.d < 1):
            raise ValueError("K and d must be positive")
        if self.D < 0 or math.isnan(self.D):
            raise ValueError("D must be >= 0")
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lam must be positive")
        for name in ("nu_a", "nu_b", "sigma", "lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr == 0:
            raise ValueError("lr must be positive")
        if self.train_steps < 0 or self.batch_size < 0 or self.train_cutoff < 0 or self.alpha_ref_size < 0:
            raise ValueError("train_steps, batch_size, train_cutoff and alpha_ref_size must be >= 0")
        AgentConfig(alpha_mode=self.alpha_mode, alpha_value=self.alpha_value,
                    alpha_condition=self.alpha_condition, warm_start_from=self.warm_start_from)

    @property
    def resolved_lam(self) -> float:
        return 1.0 + 2.0 / self.T if self.lam is None else self.lam

    def train_config(self) -> nw.TrainConfig:
        return nw.TrainConfig(lr=self.lr, steps=self.train_steps, lam=self.resolved_lam,
                              batch_size=self.batch_size or None, warm_start=self.warm_start,
                              cutoff=self.train_cutoff or None)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(lam=self.resolved_lam, nu_a=self.nu_a, nu_b=self.nu_b,
                           mode="diag" if self.diag else "full", simplified=self.simplified,
                           alpha_mode=self.alpha_mode, alpha_ramp=self.alpha_ramp,
                           alpha_value=self.alpha_value, rescale=self.rescale,
                           aggregate_params=self.aggregate_params,
                           sync_check_diag=self.sync_check_diag,
                           alpha_condition=self.alpha_condition,
                           warm_start_from=self.warm_start_from, train=self.train_config())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RegretTrace:
    policy: str
    seed: int
    regret: np.ndarray          # (T, N)
    arm: np.ndarray             # (T, N)
    alpha: np.ndarray           # (T, N)
    round_flag: np.ndarray      # (T,)
    rounds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    env_info: dict = field(default_factory=dict)
    snapshots: dict | None = None
    ucb: np.ndarray | None = None       # (T, N) combined score of the chosen arm
    h_chosen: np.ndarray | None = None  # (T, N) true expected reward of the chosen arm

    def coverage(self) -> float:
        """Fraction of (t, i) where the chosen arm's score upper-bounds its true reward."""
        if self.ucb is None:
            raise ValueError("trace has no recorded scores")
        return float(np.mean(self.ucb >= self.h_chosen))

    @property
    def T(self) -> int:
        return self.regret.shape[0]

    @property
    def N(self) -> int:
        return self.regret.shape[1]

    def cum_regret(self) -> np.ndarray:
        """Per-agent cumulative regret, shape (T, N)."""
        return np.cumsum(self.regret, axis=0)

    def mean_cum_regret(self) -> np.ndarray:
        """Cumulative regret summed over agents and divided by N, shape (T,)."""
        return np.cumsum(self.regret.sum(axis=1)) / self.N

    def total_regret(self) -> float:
        return float(self.regret.sum())

    def to_csv(self, path) -> None:
        cum = self.cum_regret()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for t in range(self.T):
                flag = int(self.round_flag[t])
                for i in range(self.N):
                    w.writerow([t + 1, i, repr(float(self.regret[t, i])), repr(float(cum[t, i])),
                                repr(float(self.alpha[t, i])), flag, self.policy, self.seed])

    @classmethod
    def from_csv(cls, path) -> "RegretTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trace")
        missing = set(TRACE_COLUMNS) - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        T = max(int(r["t"]) for r in rows)
        N = max(int(r["agent"]) for r in rows) + 1
        regret = np.zeros((T, N))
        alpha = np.zeros((T, N))
        flags = np.zeros(T, dtype=bool)
        for r in rows:
            t, i = int(r["t"]) - 1, int(r["agent"])
            regret[t, i] = float(r["regret"])
            alpha[t, i] = float(r["alpha"])
            flags[t] = bool(int(r["round_flag"]))
        return cls(rows[0]["policy"], int(rows[0]["seed"]), regret, np.zeros((T, N), dtype=int),
                   alpha, flags)


def make_env(cfg: RunConfig):
    if cfg.env in ("cosine", "square"):
        return SyntheticEnv(kind=cfg.env, d=cfg.d, K=cfg.K, sigma=cfg.sigma, seed=cfg.seed,
                            duplicate=cfg.duplicate)
    schema = cfg.dataset_schema or cfg.env
    if not cfg.dataset_path:
        raise ValueError(f"env {cfg.env!r} needs dataset_path")
    return ingest_dataset(cfg.dataset_path, schema, seed=cfg.seed, normalize=cfg.normalize,
                          duplicate=cfg.duplicate)


def network_input_dim(context_dim: int) -> int:
    """Odd context dimensions get one trailing zero so the symmetric init applies."""
    return context_dim + (context_dim % 2)


def _pad(X: np.ndarray, d_in: int) -> np.ndarray:
    if X.shape[-1] == d_in:
        return X
    out = np.zeros(X.shape[:-1] + (d_in,))
    out[..., : X.shape[-1]] = X
    return out


def setup(cfg: RunConfig, env=None):
    """Build the environment, network shape and shared initial parameters."""
    env = make_env(cfg) if env is None else env
    shape = nw.NetworkShape(network_input_dim(env.context_dim), cfg.m, cfg.L)
    theta0 = nw.init_params(shape, keyed_rng(cfg.seed, _THETA0_STREAM))
    return env, shape, theta0


def run(cfg: RunConfig, env=None) -> RegretTrace:
    """Run ``cfg`` to completion.

    Within an iteration every agent selects and observes; afterwards a
    communication round happens if any agent's sync criterion fires, and
    its broadcast is in force from the next iteration on.
    """
    env, shape, theta0 = setup(cfg, env)
    if cfg.policy != "fn-ucb":
        return _run_baseline(cfg, env, shape, theta0)

    acfg = cfg.agent_config()
    ref = None
    if cfg.alpha_ref_size:
        R = _pad(env.sample_domain(cfg.alpha_ref_size, keyed_rng(cfg.seed, _REFERENCE_STREAM)), shape.d)
        ref = nw.tangent_feature(shape, theta0, R)
    agents = [Agent(i, shape, theta0, acfg, ref, keyed_rng(cfg.seed, _AGENT_STREAM, i))
              for i in range(cfg.N)]
    server = Server(cfg.N, shape.p0, acfg.mode)

    T, N = cfg.T, cfg.N
    regret = np.zeros((T, N))
    arms = np.zeros((T, N), dtype=np.int64)
    alphas = np.zeros((T, N))
    ucb = np.zeros((T, N))
    h_chosen = np.zeros((T, N))
    flags = np.zeros(T, dtype=bool)
    snaps = None
    if cfg.record_snapshots:
        snaps = {"round_t": [], "logdet": [], "features": np.zeros((T, N, shape.p0)),
                 "contexts": np.zeros((T, N, env.K, shape.d)), "h": np.zeros((T, N, env.K)),
                 "lam": acfg.lam, "mode": acfg.mode}

    for t in range(1, T + 1):
        try:
            for i, ag in enumerate(agents):
                X, h = env.draw(t, i)
                Xp = _pad(X, shape.d)
                choice = ag.select_arm(Xp, t)
                k = choice.index
                y = env.observe(h[k], t, i)
                phi = ag._last_phi[k]
                ag.observe(Xp[k], y, phi=phi)
                regret[t - 1, i] = float(np.max(h) - h[k])
                arms[t - 1, i] = k
                alphas[t - 1, i] = choice.alpha
                ucb[t - 1, i] = choice.combined[k]
                h_chosen[t - 1, i] = h[k]
                if snaps is not None:
                    snaps["features"][t - 1, i] = phi
                    snaps["contexts"][t - 1, i] = Xp
                    snaps["h"][t - 1, i] = h
            triggers = [i for i, ag in enumerate(agents) if ag.sync_check(t, cfg.D)]
            if triggers:
                uploads = [ag.build_upload(t) for ag in agents]
                bc = server.aggregate(uploads, t=t, trigger=triggers)
                for ag in agents:
                    ag.apply_broadcast(bc, t)
                flags[t - 1] = True
                if snaps is not None:
                    snaps["round_t"].append(t)
                    snaps["logdet"].append(_logdet_of(server.W_sync, acfg.lam))
        except (nw.DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise RunError(t, str(exc)) from exc

    if snaps is not None:
        W_total = server.W_sync.copy()
        for ag in agents:
            W_total = W_total + ag.W_new
        snaps["final_logdet"] = _logdet_of(W_total, acfg.lam)
    return RegretTrace(cfg.policy, cfg.seed, regret, arms, alphas, flags, server.ledger,
                       cfg.to_dict(), env.describe(), snaps, ucb, h_chosen)


def _logdet_of(W: np.ndarray, lam: float) -> float:
    if W.ndim == 1:
        return float(np.sum(np.log(W + lam)))
    return dense_inverse_logdet(W + lam * np.eye(W.shape[0]))[1]


def _run_baseline(cfg: RunConfig, env, shape, theta0) -> RegretTrace:
    lam = cfg.resolved_lam
    mode = "diag" if cfg.diag else "full"
    policies = [BaselinePolicy(cfg.policy, shape, theta0, lam=lam, nu=cfg.nu_a, mode=mode,
                               raw_context=cfg.raw_context, train=cfg.train_config(),
                               rng=keyed_rng(cfg.seed, _AGENT_STREAM, i))
                for i in range(cfg.N)]
    T, N = cfg.T, cfg.N
    regret = np.zeros((T, N))
    arms = np.zeros((T, N), dtype=np.int64)
    for t in range(1, T + 1):
        try:
            for i, pol in enumerate(policies):
                X, h = env.draw(t, i)
                Xp = _pad(X, shape.d)
                k = pol.select_arm(Xp, t).index
                y = env.observe(h[k], t, i)
                pol.observe(Xp[k], y, t, feat=pol._last_feat[k])
                regret[t - 1, i] = float(np.max(h) - h[k])
                arms[t - 1, i] = k
        except (nw.DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise RunError(t, str(exc)) from exc
    return RegretTrace(cfg.policy, cfg.seed, regret, arms, np.zeros((T, N)), np.zeros(T, dtype=bool),
                       [], cfg.to_dict(), env.describe())


def communication_ledger(trace: RegretTrace) -> dict:
    """Round count and exact parameter counts exchanged during a run."""
    cfg = trace.config
    rounds = trace.rounds
    summary = {
        "policy": trace.policy,
        "seed": trace.seed,
        "rounds": len(rounds),
        "upload_params": int(sum(r["upload_params"] for r in rounds)),
        "broadcast_params": int(sum(r["broadcast_params"] for r in rounds)),
        "payload_bytes": int(sum(r["payload_bytes"] for r in rounds)),
        "per_round": rounds,
    }
    summary["total_params"] = summary["upload_params"] + summary["broadcast_params"]
    if rounds and cfg:
        n = cfg.get("N", 1)
        summary["params_per_upload"] = rounds[0]["upload_params"] // n
    return summary


def write_ledger(trace: RegretTrace, path) -> None:
    with open(path, "w") as fh:
        json.dump(communication_ledger(trace), fh, indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
