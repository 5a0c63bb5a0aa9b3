"""NTK and theory toolkit: recursive NTK matrix, effective dimension, nu/D calculators, epoch checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from ._kernels import _forward_np

CORR_TOL = 1e-9
PSD_TOL = 1e-8


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# NTK recursion
# ---------------------------------------------------------------------------

def arccos_expectations(a, b, c):
    """Gaussian expectations for ``(u, v) ~ N(0, [[a, c], [c, b]])``.

    Returns ``(E[max(u,0) max(v,0)], E[1(u>0) 1(v>0)])``, elementwise over
    broadcastable arrays. Correlations outside [-1, 1] by more than
    ``CORR_TOL`` are an error; smaller excursions are clamped.
    """
    a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, b, c)))
    s = np.sqrt(a * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(s > 0, c / np.where(s > 0, s, 1.0), 0.0)
    if np.any(np.abs(rho) > 1.0 + CORR_TOL):
        raise AnalysisError(f"correlation {float(np.max(np.abs(rho)))} outside [-1, 1]")
    rho = np.clip(rho, -1.0, 1.0)
    th = np.arccos(rho)
    e_relu = s / (2 * math.pi) * (np.sin(th) + (math.pi - th) * rho)
    e_step = (math.pi - th) / (2 * math.pi)
    return e_relu, e_step


def ntk_components(X, L: int) -> tuple[np.ndarray, np.ndarray]:
    """``(H_tilde^(L), Sigma^(L))`` for the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if L < 1:
        raise AnalysisError("L must be >= 1")
    sigma = X @ X.T
    h_tilde = sigma.copy()
    for _ in range(1, L):
        diag = np.diag(sigma)
        e_relu, e_step = arccos_expectations(diag[:, None], diag[None, :], sigma)
        sigma = 2.0 * e_relu
        h_tilde = 2.0 * h_tilde * e_step + sigma
    return h_tilde, sigma


@dataclass
class NTKMatrix:
    contexts: np.ndarray
    L: int
    H: np.ndarray
    clamped: bool = False
    min_eig: float = 0.0


def psd_repair(M: np.ndarray, tol: float = PSD_TOL) -> tuple[np.ndarray, bool, float]:
    """Symmetrize and clamp small negative eigenvalues; larger ones are an error."""
    M = (M + M.T) / 2
    if M.size == 0:
        return M, False, 0.0
    w, V = np.linalg.eigh(M)
    lo = float(w[0])
    if lo >= 0:
        return M, False, lo
    if lo < -tol * max(1.0, float(np.abs(w).max())):
        raise AnalysisError(f"matrix is not PSD: min eigenvalue {lo:.3g}")
    return (V * np.maximum(w, 0.0)) @ V.T, True, lo


def ntk_matrix(contexts, L: int, unit_tol: float = 1e-6) -> NTKMatrix:
    X = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > unit_tol):
        raise AnalysisError("contexts must have unit norm")
    h_tilde, sigma = ntk_components(X, L)
    H, clamped, lo = psd_repair((h_tilde + sigma) / 2)
    return NTKMatrix(X, L, H, clamped, lo)


def tangent_gram(shape: nw.NetworkShape, theta: np.ndarray, X, block: bool = True) -> np.ndarray:
    """``<g(x;theta), g(x';theta)> / m`` assembled layer by layer.

    With ``block`` only the parameters on the block-diagonal support of the
    symmetric initialization contribute (the off-diagonal hidden blocks are
    structural zeros); this is the Gram that converges to ``ntk_matrix``.
    Without it every parameter contributes and the limit is ``H_tilde^(L)``.
    """
    d, m, L = shape.d, shape.m, shape.L
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _, mats, pres, acts = _forward_np(theta, X, d, m, L)
    sq = math.sqrt(m)
    gram = acts[L - 1] @ acts[L - 1].T * m
    delta = sq * mats[-1][None, :] * (pres[L - 2] > 0)
    hm = m // 2
    for l in range(L - 2, -1, -1):
        a = acts[l]
        if block:
            ha = a.shape[1] // 2
            gram += (delta[:, :hm] @ delta[:, :hm].T) * (a[:, :ha] @ a[:, :ha].T)
            gram += (delta[:, hm:] @ delta[:, hm:].T) * (a[:, ha:] @ a[:, ha:].T)
        else:
            gram += (delta @ delta.T) * (a @ a.T)
        if l > 0:
            delta = (delta @ mats[l]) * (pres[l - 1] > 0)
    return gram / m


# ---------------------------------------------------------------------------
# effective dimension and information gain
# ---------------------------------------------------------------------------

def _logdet_i_plus(H: np.ndarray, lam: float) -> float:
    n = H.shape[0]
    if n == 0:
        return 0.0
    sign, val = np.linalg.slogdet(np.eye(n) + H / lam)
    if sign <= 0 or not np.isfinite(val):
        raise AnalysisError("I + H/lam is singular")
    return float(val)


@dataclass
class EffectiveDimension:
    d_tilde: float
    per_group: list = field(default_factory=list)
    d_max: float = 0.0


def effective_dimension(H, lam: float, horizon: float, groups=None,
                        group_horizon: float | None = None) -> EffectiveDimension:
    """log det(I + H/lam) / log(1 + horizon/lam).

    ``groups`` is an optional list of index arrays (one per agent); each gets
    its own quotient over ``group_horizon`` (default ``horizon / len(groups)``)
    and ``d_max`` is their maximum.
    """
    H = np.asarray(H, dtype=np.float64)
    if lam <= 0 or horizon <= 0:
        raise AnalysisError("lam and horizon must be positive")
    denom = math.log1p(horizon / lam)
    d = _logdet_i_plus(H, lam) / denom
    per = []
    if groups:
        gh = horizon / len(groups) if group_horizon is None else group_horizon
        gd = math.log1p(gh / lam)
        for idx in groups:
            idx = np.asarray(idx, dtype=np.int64)
            per.append(_logdet_i_plus(H[np.ix_(idx, idx)], lam) / gd)
    return EffectiveDimension(d, per, max(per) if per else d)


def greedy_information_gain(H, lam: float, k: int | None = None) -> tuple[float, list]:
    """Greedy ``max_S 1/2 log det(I + H_S/lam)`` over subsets of size ``k``.

    Each step adds the point with the largest posterior variance, which is
    the largest marginal log-det gain.
    """
    H = np.asarray(H, dtype=np.float64)
    n = H.shape[0]
    k = n if k is None else min(k, n)
    var = np.diag(H).copy() / lam
    chosen: list[int] = []
    gain = 0.0
    # incremental Cholesky of (I + H_S / lam) via posterior covariance columns
    cols = np.zeros((n, k))
    for j in range(k):
        v = var.copy()
        v[chosen] = -np.inf
        i = int(np.argmax(v))
        gain += 0.5 * math.log1p(max(var[i], 0.0))
        c = H[:, i] / lam - cols[:, :j] @ cols[i, :j]
        c /= math.sqrt(1.0 + var[i])
        cols[:, j] = c
        var = var - c * c
        chosen.append(i)
    return gain, chosen


# ---------------------------------------------------------------------------
# theory calculators
# ---------------------------------------------------------------------------

@dataclass
class TheoryParams:
    nu_tkn: float
    nu_tk: float
    D: float


def theory_params(B: float, R: float, delta: float, d_tilde: float, d_max: float,
                  T: int, K: int, N: int, lam: float) -> TheoryParams:
    if not 0.0 < delta < 1.0:
        raise AnalysisError("delta must lie in (0, 1)")
    if min(T, K, N) < 1 or lam <= 0 or B < 0 or R < 0 or d_tilde < 0 or d_max < 0:
        raise AnalysisError("T, K, N and lam must be positive; B, R and dimensions non-negative")
    nu_tkn = B + R * math.sqrt(2 * (math.log(3 / delta) + 1) + d_tilde * math.log1p(T * K * N / lam))
    nu_tk = B + R * math.sqrt(2 * (math.log(3 * N / delta) + 1) + d_max * math.log1p(T * K / lam))
    D = T / (N * d_tilde) if d_tilde > 0 else math.inf
    return TheoryParams(nu_tkn, nu_tk, D)


def estimate_B(H, h, ridge: float = 1e-8) -> float:
    """Post-hoc estimate of sqrt(2 h^T H^-1 h) over the observed contexts.

    A tiny ridge keeps near-singular NTK matrices solvable, so this is an
    estimate of the constant, not its exact value.
    """
    H = np.asarray(H, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    A = H + ridge * max(1.0, float(np.trace(H)) / max(len(h), 1)) * np.eye(len(h))
    return float(math.sqrt(max(2.0 * h @ np.linalg.solve(A, h), 0.0)))


# ---------------------------------------------------------------------------
# epoch diagnostics
# ---------------------------------------------------------------------------

def epoch_diagnostics(trace, atol: float = 1e-6) -> dict:
    """Good/bad epoch table from a run with snapshots enabled.

    Epoch p runs from the round closing epoch p-1 to the round closing it (the
    last epoch ends at T). Its log ratio is recomputed from the recorded
    features and checked against the server's log-det stream; the ratios must
    telescope to the total.
    """
    snaps = trace.snapshots
    if not snaps:
        raise AnalysisError("trace has no snapshots; run with record_snapshots=True")
    feats = snaps["features"]
    lam, mode = snaps["lam"], snaps["mode"]
    T, N, p = feats.shape
    ends = list(snaps["round_t"])
    if not ends or ends[-1] != T:
        ends.append(T)
    W = np.zeros((p, p)) if mode == "full" else np.zeros(p)
    base = p * math.log(lam)
    prev, start = base, 0
    rows = []
    for idx, end in enumerate(ends):
        F = feats[start:end].reshape(-1, p)
        if mode == "full":
            W += F.T @ F
            ld = float(np.linalg.slogdet(W + lam * np.eye(p))[1])
        else:
            W += np.sum(F * F, axis=0)
            ld = float(np.sum(np.log(W + lam)))
        log_ratio = ld - prev
        rows.append({"epoch": idx + 1, "start": start + 1, "end": end, "log_ratio": log_ratio,
                     "good": bool(-atol <= log_ratio <= 1.0)})
        prev, start = ld, end
    recorded = list(snaps["logdet"])
    mismatch = 0.0
    for r, ld in zip(rows, recorded):
        mismatch = max(mismatch, abs(base + sum(x["log_ratio"] for x in rows[:r["epoch"]]) - ld))
    total = float(snaps["final_logdet"]) - base
    tele = sum(r["log_ratio"] for r in rows)
    return {
        "epochs": rows,
        "n_epochs": len(rows),
        "n_bad": sum(not r["good"] for r in rows),
        "all_ratios_ge_1": all(r["log_ratio"] >= -atol for r in rows),
        "telescoped": tele,
        "total": total,
        "telescope_ok": abs(tele - total) <= atol * max(1.0, abs(total)),
        "max_round_mismatch": mismatch,
    }


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def analyze_trace(trace, L: int, lam: float, R: float = 0.01, delta: float = 0.1,
                  max_contexts: int = 1000) -> dict:
    """Effective dimensions, B estimate, suggested nu/D and the epoch table.

    The NTK is evaluated on the first ``max_contexts`` contexts per agent
    (all arms), so ``d_tilde`` is reported for that prefix.
    """
    snaps = trace.snapshots
    if not snaps or "contexts" not in snaps:
        raise AnalysisError("trace has no context snapshots")
    C, hv = snaps["contexts"], snaps["h"]
    T, N, K, d = C.shape
    t_use = max(1, min(T, max_contexts // max(N * K, 1)))
    X = C[:t_use].transpose(1, 0, 2, 3).reshape(-1, d)
    y = hv[:t_use].transpose(1, 0, 2).reshape(-1)
    keep = np.linalg.norm(X, axis=1) > 0
    X = X / np.where(keep, np.linalg.norm(X, axis=1), 1.0)[:, None]
    ntk = ntk_matrix(X, L)
    per = t_use * K
    groups = [np.arange(i * per, (i + 1) * per) for i in range(N)]
    eff = effective_dimension(ntk.H, lam, t_use * K * N, groups, t_use * K)
    B = estimate_B(ntk.H, y)
    theory = theory_params(B, R, delta, eff.d_tilde, eff.d_max, T, K, N, lam)
    report = {
        "T_used": t_use, "n_contexts": int(len(X)), "L": L, "lam": lam,
        "psd_clamped": ntk.clamped, "min_eig": ntk.min_eig,
        "d_tilde": eff.d_tilde, "d_tilde_i": eff.per_group, "d_tilde_max": eff.d_max,
        "B_estimate": B, "B_is_estimate": True, "R": R, "delta": delta,
        "nu_tkn": theory.nu_tkn, "nu_tk": theory.nu_tk, "D_suggested": theory.D,
    }
    if "features" in snaps:
        report["epochs"] = epoch_diagnostics(trace)
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, default=lambda o: o.item() if hasattr(o, "item") else str(o))
