"""Federated neural contextual bandits with two combined UCBs and log-det triggered sync."""

from ._kernels import BACKEND
from .agent import Agent, AgentConfig
from .analysis import effective_dimension, ntk_matrix, theory_params
from .environments import ClassificationBanditEnv, DatasetSchema, SyntheticEnv
from .harness import RegretTrace, RunConfig, communication_ledger, run
from .network import NetworkShape, TrainConfig, init_params
from .packets import AgentUpload, ServerBroadcast, payload_size
from .server import Server

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Agent", "AgentConfig", "effective_dimension", "ntk_matrix", "theory_params",
    "ClassificationBanditEnv", "DatasetSchema", "SyntheticEnv", "RegretTrace", "RunConfig",
    "communication_ledger", "run", "NetworkShape", "TrainConfig", "init_params", "AgentUpload",
    "ServerBroadcast", "payload_size", "Server",
]
