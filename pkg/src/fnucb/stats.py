"""Regularized Gram accumulators over tangent features.

A :class:`CovarianceState` tracks ``V = lam * I + W`` together with its inverse
and log-determinant. In ``"full"`` mode ``W`` is a dense ``p x p`` matrix and
the inverse is maintained with Sherman-Morrison rank-one updates, refreshed
densely every ``refresh_every`` updates. In ``"diag"`` mode only the diagonal
of ``W`` is kept and every quantity is elementwise.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels

MODES = ("full", "diag")


class StatsError(ValueError):
    pass


def _check_mode(mode):
    if mode not in MODES:
        raise StatsError(f"unknown mode {mode!r}; expected one of {MODES}")


def dense_inverse_logdet(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse and log-determinant of a symmetric positive definite matrix via Cholesky."""
    C = np.linalg.cholesky(A)
    logdet = 2.0 * float(np.sum(np.log(np.diag(C))))
    Cinv = np.linalg.inv(C)
    return Cinv.T @ Cinv, logdet


class CovarianceState:
    def __init__(self, dim: int, lam: float, mode: str = "full", refresh_every: int = 512):
        _check_mode(mode)
        if lam <= 0:
            raise StatsError("lam must be positive")
        self.dim = dim
        self.lam = float(lam)
        self.mode = mode
        self.refresh_every = refresh_every
        if mode == "full":
            self.W = np.zeros((dim, dim))
            self.inv = np.eye(dim) / lam
        else:
            self.W = np.zeros(dim)
            self.inv = np.full(dim, 1.0 / lam)
        self.logdet = dim * math.log(lam)
        self.n_updates = 0
        self.refreshes = 0

    @classmethod
    def from_accumulator(cls, W: np.ndarray, lam: float, mode: str | None = None,
                         refresh_every: int = 512) -> "CovarianceState":
        W = np.asarray(W, dtype=np.float64)
        if mode is None:
            mode = "full" if W.ndim == 2 else "diag"
        st = cls(W.shape[0], lam, mode, refresh_every)
        if mode == "full" and W.ndim == 1:
            W = np.diag(W)
        elif mode == "diag" and W.ndim == 2:
            W = np.diag(W).copy()
        st.W = W.copy()
        st.refresh()
        return st

    def copy(self) -> "CovarianceState":
        out = CovarianceState.__new__(CovarianceState)
        out.__dict__.update(self.__dict__)
        out.W = self.W.copy()
        out.inv = self.inv.copy()
        return out

    def matrix(self) -> np.ndarray:
        """``lam * I + W``; a vector in diag mode."""
        if self.mode == "full":
            return self.W + self.lam * np.eye(self.dim)
        return self.W + self.lam

    def refresh(self) -> None:
        """Recompute the inverse and log-determinant from the accumulator."""
        if self.mode == "full":
            self.inv, self.logdet = dense_inverse_logdet(self.matrix())
        else:
            v = self.W + self.lam
            self.inv = 1.0 / v
            self.logdet = float(np.sum(np.log(v)))
        self.refreshes += 1

    def _check_phi(self, phi):
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape[-1] != self.dim:
            raise StatsError(f"feature dim {phi.shape[-1]} != {self.dim}")
        return phi

    def update(self, phi: np.ndarray) -> "CovarianceState":
        """Add ``phi phi^T`` (or its diagonal) and update inverse and log-det in place."""
        phi = self._check_phi(phi)
        if not np.all(np.isfinite(phi)):
            raise StatsError("non-finite feature")
        if not np.any(phi):
            return self
        if self.mode == "full":
            self.W += np.outer(phi, phi)
            self.logdet += _kernels.sherman_morrison(self.inv, np.ascontiguousarray(phi))
            self.n_updates += 1
            if self.refresh_every and self.n_updates % self.refresh_every == 0:
                self.refresh()
        else:
            sq = phi * phi
            old = self.W + self.lam
            self.W += sq
            self.logdet += float(np.sum(np.log1p(sq / old)))
            self.inv = 1.0 / (self.W + self.lam)
            self.n_updates += 1
        return self

    def mahalanobis(self, phi: np.ndarray) -> float | np.ndarray:
        """``sqrt(phi^T V^-1 phi)``, row-wise for a 2-D input."""
        phi = self._check_phi(phi)
        return mahalanobis_with(self.inv, phi)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``V^-1 b`` using the maintained inverse."""
        return self.inv @ b if self.mode == "full" else self.inv * b


def mahalanobis_with(inv: np.ndarray, phi: np.ndarray) -> float | np.ndarray:
    """Norm of ``phi`` under a given inverse (dense matrix or diagonal vector)."""
    if inv.ndim == 2:
        q = phi @ inv
        val = np.einsum("...i,...i->...", q, phi)
    else:
        val = (phi * phi) @ inv
    val = np.maximum(val, 0.0)
    return float(np.sqrt(val)) if np.ndim(val) == 0 else np.sqrt(val)


def merge(*items):
    """Sum accumulators.

    Accepts either :class:`CovarianceState` objects (same mode, dim and lam),
    returning a fresh state over the summed ``W``, or plain arrays, returning
    their sum. Summation runs in argument order.
    """
    if not items:
        raise StatsError("nothing to merge")
    if isinstance(items[0], CovarianceState):
        first = items[0]
        for s in items[1:]:
            if s.mode != first.mode or s.dim != first.dim or s.lam != first.lam:
                raise StatsError("cannot merge states with different mode, dim or lam")
        if len(items) == 1:
            return first.copy()
        W = first.W.copy()
        for s in items[1:]:
            W += s.W
        return CovarianceState.from_accumulator(W, first.lam, first.mode, first.refresh_every)
    total = np.array(items[0], dtype=np.float64, copy=True)
    for a in items[1:]:
        if np.shape(a) != total.shape:
            raise StatsError("accumulator shapes differ")
        total += a
    return total


def mean_inverse(states) -> np.ndarray:
    """Entrywise mean of the maintained inverses (not the inverse of the mean)."""
    states = list(states)
    if not states:
        raise StatsError("mean_inverse needs at least one state")
    first = states[0]
    for s in states[1:]:
        if s.mode != first.mode or s.dim != first.dim or s.lam != first.lam:
            raise StatsError("states differ in mode, dim or lam")
    return mean_of_arrays([s.inv for s in states])


def mean_of_arrays(arrays) -> np.ndarray:
    arrays = list(arrays)
    out = np.array(arrays[0], dtype=np.float64, copy=True)
    for a in arrays[1:]:
        out += a
    out /= len(arrays)
    return out


def logdet_ratio(current: CovarianceState, reference: CovarianceState, tol: float = 1e-9) -> float:
    """``log det(current) - log det(reference)``; must be non-negative."""
    r = current.logdet - reference.logdet
    if r < -tol * max(1.0, abs(reference.logdet)):
        raise StatsError(f"log-det ratio {r} is negative; current is not an update of reference")
    return max(r, 0.0)


def diag_logdet(W_diag: np.ndarray, lam: float) -> float:
    return float(np.sum(np.log(W_diag + lam)))


# serialization ---------------------------------------------------------------

def accumulator_to_list(W: np.ndarray) -> list:
    """JSON-friendly layout: row-major nested list (full) or flat list (diag)."""
    return np.asarray(W, dtype=np.float64).tolist()


def accumulator_from_list(obj) -> np.ndarray:
    return np.asarray(obj, dtype=np.float64)
