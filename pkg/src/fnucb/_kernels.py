"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time. Set ``FNUCB_DISABLE_NUMBA=1`` to
force the numpy implementations (useful for debugging and for the kernel
benchmark). Both paths consume identical inputs, including precomputed
minibatch index arrays, so they agree up to floating-point summation order.

Parameter layout used by every kernel: ``theta`` is flat, layer by layer,
each weight matrix flattened row-major. Layer 0 is ``m x d``, layers
``1..L-2`` are ``m x m`` and the output layer is a length-``m`` row.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("FNUCB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"


def layer_offsets(d: int, m: int, L: int) -> np.ndarray:
    """Start offset of each layer in the flat parameter vector, plus the total."""
    sizes = [m * d] + [m * m] * (L - 2) + [m]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _unpack(theta, d, m, L):
    off = layer_offsets(d, m, L)
    mats = [theta[off[0]:off[1]].reshape(m, d)]
    for l in range(1, L - 1):
        mats.append(theta[off[l]:off[l + 1]].reshape(m, m))
    mats.append(theta[off[L - 1]:off[L]])
    return mats


def _forward_np(theta, X, d, m, L):
    mats = _unpack(theta, d, m, L)
    acts = [X]
    pres = []
    a = X
    for W in mats[:-1]:
        h = a @ W.T
        pres.append(h)
        a = np.maximum(h, 0.0)
        acts.append(a)
    f = math.sqrt(m) * (a @ mats[-1])
    return f, mats, pres, acts


def forward_batch_np(theta, X, d, m, L):
    return _forward_np(theta, X, d, m, L)[0]


def grad_batch_np(theta, X, d, m, L):
    n = X.shape[0]
    f, mats, pres, acts = _forward_np(theta, X, d, m, L)
    off = layer_offsets(d, m, L)
    G = np.empty((n, off[-1]))
    sq = math.sqrt(m)
    G[:, off[L - 1]:] = sq * acts[L - 1]
    delta = sq * mats[-1][None, :] * (pres[L - 2] > 0)
    for l in range(L - 2, -1, -1):
        G[:, off[l]:off[l + 1]] = (delta[:, :, None] * acts[l][:, None, :]).reshape(n, -1)
        if l > 0:
            delta = (delta @ mats[l]) * (pres[l - 1] > 0)
    return f, G


def _loss_grad_np(theta, X, y, d, m, L):
    """Sum of squared-error halves and its gradient over the rows of X."""
    f, mats, pres, acts = _forward_np(theta, X, d, m, L)
    r = f - y
    off = layer_offsets(d, m, L)
    grad = np.empty(off[-1])
    sq = math.sqrt(m)
    grad[off[L - 1]:] = sq * (r @ acts[L - 1])
    delta = sq * r[:, None] * mats[-1][None, :] * (pres[L - 2] > 0)
    for l in range(L - 2, -1, -1):
        grad[off[l]:off[l + 1]] = (delta.T @ acts[l]).ravel()
        if l > 0:
            delta = (delta @ mats[l]) * (pres[l - 1] > 0)
    return 0.5 * float(r @ r), grad


def train_steps_np(theta, theta0, X, y, batches, lr, reg, d, m, L):
    """Run ``len(batches)`` gradient steps; returns (theta, batch losses).

    Each step descends ``mean_b (f - y)^2 / 2 + reg * ||theta - theta0||^2 / 2``
    on the rows listed in ``batches[j]``. Stops early (returning the partial
    loss array with a non-finite last entry) if the parameters blow up.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_steps_np(theta.copy(), theta0, X, y, batches, lr, reg, d, m, L)


def _train_steps_np(theta, theta0, X, y, batches, lr, reg, d, m, L):
    J, b = batches.shape
    losses = np.empty(J)
    for j in range(J):
        idx = batches[j]
        sse, grad = _loss_grad_np(theta, X[idx], y[idx], d, m, L)
        diff = theta - theta0
        losses[j] = sse / b + 0.5 * reg * float(diff @ diff)
        theta -= lr * (grad / b + reg * diff)
        if not np.isfinite(losses[j]) or not np.all(np.isfinite(theta)):
            losses[j] = np.nan
            return theta, losses[: j + 1]
    return theta, losses


def sherman_morrison_np(inv, phi):
    """In-place rank-one update of ``inv`` for ``A + phi phi^T``; returns log(1 + phi^T A^-1 phi)."""
    u = inv @ phi
    q = float(phi @ u)
    inv -= np.outer(u, u) / (1.0 + q)
    return math.log1p(q)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def _forward_one(theta, x, off, d, m, L, pres, acts):
        # pres/acts are (L-1, m) scratch buffers
        for j in range(m):
            s = 0.0
            base = off[0] + j * d
            for k in range(d):
                s += theta[base + k] * x[k]
            pres[0, j] = s
            acts[0, j] = s if s > 0.0 else 0.0
        for l in range(1, L - 1):
            for j in range(m):
                s = 0.0
                base = off[l] + j * m
                for k in range(m):
                    s += theta[base + k] * acts[l - 1, k]
                pres[l, j] = s
                acts[l, j] = s if s > 0.0 else 0.0
        s = 0.0
        for k in range(m):
            s += theta[off[L - 1] + k] * acts[L - 2, k]
        return math.sqrt(m) * s

    @numba.njit(cache=True)
    def _backward_one(theta, x, off, d, m, L, pres, acts, scale, out, delta, tmp):
        # accumulates scale * df/dtheta into out
        sq = math.sqrt(m)
        for k in range(m):
            out[off[L - 1] + k] += scale * sq * acts[L - 2, k]
            delta[k] = scale * sq * theta[off[L - 1] + k] if pres[L - 2, k] > 0.0 else 0.0
        for l in range(L - 2, -1, -1):
            if l == 0:
                for j in range(m):
                    dj = delta[j]
                    if dj != 0.0:
                        base = off[0] + j * d
                        for k in range(d):
                            out[base + k] += dj * x[k]
            else:
                for k in range(m):
                    tmp[k] = 0.0
                for j in range(m):
                    dj = delta[j]
                    if dj != 0.0:
                        base = off[l] + j * m
                        for k in range(m):
                            out[base + k] += dj * acts[l - 1, k]
                            tmp[k] += theta[base + k] * dj
                for k in range(m):
                    delta[k] = tmp[k] if pres[l - 1, k] > 0.0 else 0.0

    @numba.njit(cache=True)
    def forward_batch_nb(theta, X, d, m, L, off):
        n = X.shape[0]
        f = np.empty(n)
        pres = np.empty((L - 1, m))
        acts = np.empty((L - 1, m))
        for i in range(n):
            f[i] = _forward_one(theta, X[i], off, d, m, L, pres, acts)
        return f

    @numba.njit(cache=True)
    def grad_batch_nb(theta, X, d, m, L, off):
        n = X.shape[0]
        p = off[L]
        f = np.empty(n)
        G = np.zeros((n, p))
        pres = np.empty((L - 1, m))
        acts = np.empty((L - 1, m))
        delta = np.empty(m)
        tmp = np.empty(m)
        for i in range(n):
            f[i] = _forward_one(theta, X[i], off, d, m, L, pres, acts)
            _backward_one(theta, X[i], off, d, m, L, pres, acts, 1.0, G[i], delta, tmp)
        return f, G

    @numba.njit(cache=True)
    def train_steps_nb(theta_in, theta0, X, y, batches, lr, reg, d, m, L, off):
        theta = theta_in.copy()
        p = off[L]
        J, b = batches.shape
        losses = np.empty(J)
        grad = np.empty(p)
        pres = np.empty((L - 1, m))
        acts = np.empty((L - 1, m))
        delta = np.empty(m)
        tmp = np.empty(m)
        for j in range(J):
            for k in range(p):
                grad[k] = 0.0
            sse = 0.0
            for t in range(b):
                i = batches[j, t]
                r = _forward_one(theta, X[i], off, d, m, L, pres, acts) - y[i]
                sse += r * r
                _backward_one(theta, X[i], off, d, m, L, pres, acts, r, grad, delta, tmp)
            reg_term = 0.0
            ok = True
            for k in range(p):
                diff = theta[k] - theta0[k]
                reg_term += diff * diff
                theta[k] -= lr * (grad[k] / b + reg * diff)
                if not np.isfinite(theta[k]):
                    ok = False
            losses[j] = 0.5 * sse / b + 0.5 * reg * reg_term
            if not ok or not np.isfinite(losses[j]):
                losses[j] = np.nan
                return theta, losses[: j + 1]
        return theta, losses

    @numba.njit(cache=True)
    def sherman_morrison_nb(inv, phi):
        p = phi.shape[0]
        u = np.zeros(p)
        for i in range(p):
            s = 0.0
            for k in range(p):
                s += inv[i, k] * phi[k]
            u[i] = s
        q = 0.0
        for i in range(p):
            q += phi[i] * u[i]
        c = 1.0 / (1.0 + q)
        for i in range(p):
            ui = u[i] * c
            for k in range(p):
                inv[i, k] -= ui * u[k]
        return math.log1p(q)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def forward_batch(theta, X, d, m, L, backend=None):
    if (backend or BACKEND) == "numba":
        return forward_batch_nb(theta, X, d, m, L, layer_offsets(d, m, L))
    return forward_batch_np(theta, X, d, m, L)


def grad_batch(theta, X, d, m, L, backend=None):
    if (backend or BACKEND) == "numba":
        return grad_batch_nb(theta, X, d, m, L, layer_offsets(d, m, L))
    return grad_batch_np(theta, X, d, m, L)


def train_steps(theta, theta0, X, y, batches, lr, reg, d, m, L, backend=None):
    batches = np.ascontiguousarray(batches, dtype=np.int64)
    if (backend or BACKEND) == "numba":
        return train_steps_nb(theta, theta0, X, y, batches, float(lr), float(reg), d, m, L,
                              layer_offsets(d, m, L))
    return train_steps_np(theta, theta0, X, y, batches, lr, reg, d, m, L)


def sherman_morrison(inv, phi, backend=None):
    if (backend or BACKEND) == "numba":
        return sherman_morrison_nb(inv, phi)
    return sherman_morrison_np(inv, phi)
