"""Central server: sums statistics, averages parameters and inverses, takes the min alpha."""

from __future__ import annotations

import json

import numpy as np

from .packets import AgentUpload, PacketError, ServerBroadcast, payload_size
from .stats import mean_of_arrays


class ProtocolError(RuntimeError):
    pass


class Server:
    def __init__(self, n_agents: int, p0: int, mode: str = "full"):
        self.n_agents = n_agents
        self.p0 = p0
        self.mode = mode
        self.W_sync = np.zeros((p0, p0)) if mode == "full" else np.zeros(p0)
        self.B_sync = np.zeros(p0)
        self.rounds = 0
        self.last_broadcast: ServerBroadcast | None = None
        self.ledger: list[dict] = []

    def aggregate(self, uploads, t: int | None = None, trigger=None) -> ServerBroadcast:
        uploads = sorted(uploads, key=lambda u: u.agent)
        ids = [u.agent for u in uploads]
        if ids != list(range(self.n_agents)):
            raise ProtocolError(f"expected exactly one upload from each of agents 0..{self.n_agents - 1}, got {ids}")
        for u in uploads:
            try:
                u.validate(self.p0, self.mode)
            except PacketError as exc:
                raise ProtocolError(f"agent {u.agent}: {exc}") from None

        # fixed ascending-id summation order keeps the result bitwise reproducible
        for u in uploads:
            self.W_sync += u.W
            self.B_sync += u.B
        theta = mean_of_arrays([u.theta for u in uploads])
        inv = mean_of_arrays([u.inv for u in uploads])
        alpha = min(u.alpha for u in uploads)
        self.rounds += 1
        bc = ServerBroadcast(self.W_sync.copy(), self.B_sync.copy(), theta, inv, float(alpha),
                             round_index=self.rounds)
        self.last_broadcast = bc
        per = payload_size(self.p0, self.mode)
        self.ledger.append({
            "round": self.rounds,
            "t": t,
            "trigger": trigger,
            "upload_params": per * self.n_agents,
            "broadcast_params": per * self.n_agents,
            "payload_bytes": 8 * per * 2 * self.n_agents,
        })
        return bc

    def ledger_jsonl(self) -> str:
        return "".join(json.dumps(row) + "\n" for row in self.ledger)
