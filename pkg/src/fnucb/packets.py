"""Wire format for the agent upload and server broadcast.

Both packets carry five fields in a fixed order: an accumulator ``W``
(``p x p`` row-major, or a length-``p`` diagonal), a vector ``B``, a parameter
vector ``theta``, an inverse covariance (same layout as ``W``) and a scalar
``alpha``. The binary encoding is the raw little-endian float64 concatenation
of those fields, so its length is exactly ``8 * n_params``::

    full mode:  2 p^2 + 2 p + 1 values
    diag mode:  4 p + 1 values
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_DT = np.dtype("<f8")


class PacketError(ValueError):
    pass


def payload_size(p0: int, mode: str) -> int:
    """Number of scalars in one packet."""
    if mode == "full":
        return 2 * p0 * p0 + 2 * p0 + 1
    if mode == "diag":
        return 4 * p0 + 1
    raise PacketError(f"unknown mode {mode!r}")


@dataclass
class _Packet:
    W: np.ndarray
    B: np.ndarray
    theta: np.ndarray
    inv: np.ndarray
    alpha: float

    @property
    def mode(self) -> str:
        return "full" if self.W.ndim == 2 else "diag"

    @property
    def p0(self) -> int:
        return self.B.shape[0]

    def validate(self, p0: int | None = None, mode: str | None = None) -> None:
        p = self.p0 if p0 is None else p0
        m = self.mode if mode is None else mode
        want = (p, p) if m == "full" else (p,)
        for name, arr, shape in (("W", self.W, want), ("B", self.B, (p,)),
                                 ("theta", self.theta, (p,)), ("inv", self.inv, want)):
            if arr.shape != shape:
                raise PacketError(f"{name} has shape {arr.shape}, expected {shape}")
        if not 0.0 <= self.alpha <= 1.0:
            raise PacketError(f"alpha {self.alpha} outside [0, 1]")

    @property
    def n_params(self) -> int:
        return self.W.size + self.B.size + self.theta.size + self.inv.size + 1

    def to_bytes(self) -> bytes:
        parts = [self.W.ravel(), self.B, self.theta, self.inv.ravel(), np.array([self.alpha])]
        return np.concatenate(parts).astype(_DT).tobytes()

    @classmethod
    def _fields_from_bytes(cls, buf: bytes, p0: int, mode: str):
        n = payload_size(p0, mode)
        if len(buf) != 8 * n:
            raise PacketError(f"expected {8 * n} bytes for p0={p0} ({mode}), got {len(buf)}")
        flat = np.frombuffer(buf, dtype=_DT).astype(np.float64)
        wsz = p0 * p0 if mode == "full" else p0
        shape = (p0, p0) if mode == "full" else (p0,)
        i = 0
        W = flat[i:i + wsz].reshape(shape); i += wsz
        B = flat[i:i + p0]; i += p0
        theta = flat[i:i + p0]; i += p0
        inv = flat[i:i + wsz].reshape(shape); i += wsz
        return W, B, theta, inv, float(flat[i])

    def _json_fields(self) -> dict:
        return {"mode": self.mode, "p0": self.p0, "W": self.W.tolist(), "B": self.B.tolist(),
                "theta": self.theta.tolist(), "inv": self.inv.tolist(), "alpha": self.alpha}

    @staticmethod
    def _parse_json(obj):
        return (np.asarray(obj["W"], dtype=np.float64), np.asarray(obj["B"], dtype=np.float64),
                np.asarray(obj["theta"], dtype=np.float64), np.asarray(obj["inv"], dtype=np.float64),
                float(obj["alpha"]))


@dataclass
class AgentUpload(_Packet):
    """``W_new``, ``B_new``, locally trained ``theta``, ``V_local^-1`` and ``alpha_i``."""

    agent: int = 0

    def to_json(self) -> str:
        obj = self._json_fields()
        obj["agent"] = self.agent
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "AgentUpload":
        obj = json.loads(text)
        pkt = cls(*cls._parse_json(obj), agent=int(obj["agent"]))
        pkt.validate(int(obj["p0"]), obj["mode"])
        return pkt

    @classmethod
    def from_bytes(cls, buf: bytes, p0: int, mode: str, agent: int = 0) -> "AgentUpload":
        return cls(*cls._fields_from_bytes(buf, p0, mode), agent=agent)


@dataclass
class ServerBroadcast(_Packet):
    """``W_sync``, ``B_sync``, averaged ``theta``, averaged inverse and global ``alpha``."""

    round_index: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def to_json(self) -> str:
        obj = self._json_fields()
        obj["round_index"] = self.round_index
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "ServerBroadcast":
        obj = json.loads(text)
        pkt = cls(*cls._parse_json(obj), round_index=int(obj["round_index"]))
        pkt.validate(int(obj["p0"]), obj["mode"])
        return pkt

    @classmethod
    def from_bytes(cls, buf: bytes, p0: int, mode: str, round_index: int = 0) -> "ServerBroadcast":
        return cls(*cls._fields_from_bytes(buf, p0, mode), round_index=round_index)

    def synced_state(self, lam: float, refresh_every: int = 512):
        """``lam * I + W_sync`` with inverse and log-det, computed once per packet.

        Every agent receiving the same broadcast gets a copy of the same state.
        """
        from .stats import CovarianceState

        key = ("synced", lam, refresh_every)
        if key not in self._cache:
            self._cache[key] = CovarianceState.from_accumulator(self.W, lam, self.mode, refresh_every)
        return self._cache[key].copy()
