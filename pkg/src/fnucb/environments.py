"""Reward environments: synthetic functions on the unit sphere and classification adapters.

All randomness is keyed by ``(seed, stream, agent, t)`` so any draw can be
replayed in isolation and environment streams never depend on what the
learner does.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_CONTEXT_STREAM = 0xC0
_NOISE_STREAM = 0xE0
_PARAM_STREAM = 0xA0

DATA_ROOT_ENV = "FNUCB_DATA_ROOT"


class ContextError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


def unit_sphere(rng, n: int, d: int) -> np.ndarray:
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def duplicate_transform(x) -> np.ndarray:
    """Map unit ``x`` to ``(x, x) / sqrt(2)``: unit norm with identical halves."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ContextError("cannot duplicate a zero vector")
    return np.concatenate([x, x], axis=-1) / math.sqrt(2.0)


class Environment:
    K: int
    context_dim: int
    has_true_reward = True

    def draw(self, t: int, agent: int) -> tuple[np.ndarray, np.ndarray]:
        """``(contexts, h)``: K contexts and their exact expected rewards."""
        raise NotImplementedError

    def draw_contexts(self, t: int, agent: int) -> np.ndarray:
        return self.draw(t, agent)[0]

    def observe(self, h: float, t: int, agent: int) -> float:
        return float(h)

    def reward(self, x, t: int, agent: int) -> tuple[float, float]:
        """Noisy observation and exact reward for a context delivered at ``(t, agent)``."""
        X, h = self.draw(t, agent)
        x = np.asarray(x, dtype=np.float64)
        hits = np.flatnonzero(np.all(X == x, axis=1)) if x.shape == X.shape[1:] else []
        if len(hits) == 0:
            raise ContextError(f"context was not delivered at t={t}, agent={agent}")
        k = int(hits[0])
        return self.observe(h[k], t, agent), float(h[k])

    def sample_domain(self, n: int, rng) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {}


@dataclass
class SyntheticEnv(Environment):
    kind: str = "cosine"
    d: int = 10
    K: int = 4
    sigma: float = 0.01
    seed: int = 0
    duplicate: bool = False
    a: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("cosine", "square"):
            raise ContextError(f"unknown synthetic kind {self.kind!r}")
        if self.a is None:
            self.a = unit_sphere(keyed_rng(self.seed, _PARAM_STREAM), 1, self.d)[0]
        else:
            self.a = np.asarray(self.a, dtype=np.float64)
            if abs(np.linalg.norm(self.a) - 1.0) > 1e-9:
                raise ContextError("hidden parameter must have unit norm")

    @property
    def context_dim(self) -> int:
        return 2 * self.d if self.duplicate else self.d

    def h(self, x_raw) -> np.ndarray:
        """Exact reward of raw (untransformed) unit contexts."""
        z = np.asarray(x_raw) @ self.a
        if self.kind == "cosine":
            return np.cos(3.0 * z)
        return 10.0 * z * z

    def _raw(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.context_dim:
            raise ContextError(f"context dim {X.shape[-1]} != {self.context_dim}")
        if self.duplicate:
            return X[..., : self.d] * math.sqrt(2.0)
        return X

    def true_reward(self, X) -> np.ndarray:
        return self.h(self._raw(X))

    def draw(self, t, agent):
        rng = keyed_rng(self.seed, _CONTEXT_STREAM, agent, t)
        raw = unit_sphere(rng, self.K, self.d)
        h = self.h(raw)
        X = duplicate_transform(raw) if self.duplicate else raw
        return X, h

    def observe(self, h, t, agent):
        if self.sigma == 0:
            return float(h)
        rng = keyed_rng(self.seed, _NOISE_STREAM, agent, t)
        return float(h + self.sigma * rng.standard_normal())

    def reward(self, x, t=None, agent=None):
        """For synthetic functions the reward only depends on ``x``.

        Without ``(t, agent)`` the observation is noiseless.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.context_dim,) or abs(np.linalg.norm(x) - 1.0) > 1e-9:
            raise ContextError("context is not a unit vector of this environment")
        h = float(self.true_reward(x))
        if t is None:
            return h, h
        return self.observe(h, t, agent), h

    def sample_domain(self, n, rng):
        raw = unit_sphere(rng, n, self.d)
        return duplicate_transform(raw) if self.duplicate else raw

    def describe(self):
        return {"env": self.kind, "d": self.d, "K": self.K, "sigma": self.sigma,
                "duplicate": self.duplicate, "a": self.a.tolist()}


# ---------------------------------------------------------------------------
# classification datasets
# ---------------------------------------------------------------------------

@dataclass
class DatasetSchema:
    """Column roles of a classification CSV.

    ``features`` and ``label`` are 0-based column indices. Labels are mapped
    to arms either through ``label_map`` (raw string -> arm) or as
    ``int(raw) - label_base``.
    """

    name: str
    n_features: int
    n_classes: int
    features: list[int]
    label: int
    label_base: int = 0
    label_map: dict[str, int] | None = None
    delimiter: str | None = ","
    header: bool = False

    @classmethod
    def from_dict(cls, obj: dict) -> "DatasetSchema":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise DatasetError(f"unknown schema keys: {sorted(extra)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# UCI Statlog (Shuttle): 9 numeric attributes, class 1..7 in the last column,
# whitespace-separated in the original distribution.
SHUTTLE_SCHEMA = DatasetSchema(name="shuttle", n_features=9, n_classes=7,
                               features=list(range(9)), label=9, label_base=1, delimiter=None)

# UCI MAGIC gamma telescope: 10 numeric attributes, class 'g' or 'h' last.
MAGIC_SCHEMA = DatasetSchema(name="magic", n_features=10, n_classes=2,
                             features=list(range(10)), label=10, label_map={"g": 0, "h": 1})

SCHEMAS = {"shuttle": SHUTTLE_SCHEMA, "magic": MAGIC_SCHEMA}


def resolve_data_path(path) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and root:
        p = Path(root) / p
    return p


def _split(line: str, delimiter):
    if delimiter is None:
        return line.split()
    return next(csv.reader([line], delimiter=delimiter))


def read_dataset(path, schema: DatasetSchema) -> tuple[np.ndarray, np.ndarray]:
    path = resolve_data_path(path)
    if len(schema.features) != schema.n_features:
        raise DatasetError("schema feature column count does not match n_features")
    feats, labels = [], []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    start = 1 if schema.header else 0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        cells = _split(line, schema.delimiter)
        need = max(schema.features + [schema.label]) + 1
        if len(cells) < need:
            raise DatasetError(f"{path}:{lineno}: expected at least {need} columns, got {len(cells)}")
        try:
            row = [float(cells[c]) for c in schema.features]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: non-numeric feature ({exc})") from None
        raw = cells[schema.label].strip()
        if schema.label_map is not None:
            if raw not in schema.label_map:
                raise DatasetError(f"{path}:{lineno}: unknown label {raw!r}")
            lab = schema.label_map[raw]
        else:
            try:
                lab = int(float(raw)) - schema.label_base
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer label {raw!r}") from None
        if not 0 <= lab < schema.n_classes:
            raise DatasetError(f"{path}:{lineno}: label {raw!r} outside 0..{schema.n_classes - 1}")
        feats.append(row)
        labels.append(lab)
    if not feats:
        raise DatasetError(f"{path}: no data rows")
    return np.asarray(feats, dtype=np.float64), np.asarray(labels, dtype=np.int64)


@dataclass
class ClassificationBanditEnv(Environment):
    """K-class classification as a K-armed bandit.

    Each draw picks a row uniformly (with replacement, per-agent stream) and
    builds K block contexts: arm k carries the feature vector in block k.
    Reward is 1 for the true class and 0 otherwise, without noise.
    """

    features: np.ndarray = field(repr=False, default=None)
    labels: np.ndarray = field(repr=False, default=None)
    n_classes: int = 2
    seed: int = 0
    normalize: bool = True
    name: str = "dataset"
    duplicate: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) == 0:
            raise DatasetError("features must be a non-empty 2-D array")
        if len(self.labels) != len(self.features):
            raise DatasetError("features and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DatasetError("labels out of range")
        if self.normalize:
            norms = np.linalg.norm(self.features, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            self.features = self.features / norms
        self.d = self.features.shape[1]
        self.K = self.n_classes

    @property
    def context_dim(self) -> int:
        base = self.d * self.K
        return 2 * base if self.duplicate else base

    def embed(self, row: np.ndarray) -> np.ndarray:
        X = np.zeros((self.K, self.d * self.K))
        for k in range(self.K):
            X[k, k * self.d:(k + 1) * self.d] = row
        return duplicate_transform(X) if self.duplicate else X

    def draw(self, t, agent):
        rng = keyed_rng(self.seed, _CONTEXT_STREAM, agent, t)
        i = int(rng.integers(len(self.features)))
        h = np.zeros(self.K)
        h[self.labels[i]] = 1.0
        return self.embed(self.features[i]), h

    def sample_domain(self, n, rng):
        rows = rng.integers(len(self.features), size=-(-n // self.K))
        return np.concatenate([self.embed(self.features[i]) for i in rows])[:n]

    def describe(self):
        return {"env": self.name, "d": self.d, "K": self.K, "rows": len(self.features),
                "normalize": self.normalize, "duplicate": self.duplicate}


def ingest_dataset(path, schema: DatasetSchema | str, seed: int = 0, normalize: bool = True,
                   duplicate: bool = False) -> ClassificationBanditEnv:
    if isinstance(schema, str):
        schema = SCHEMAS[schema] if schema in SCHEMAS else DatasetSchema.load(schema)
    X, y = read_dataset(path, schema)
    return ClassificationBanditEnv(features=X, labels=y, n_classes=schema.n_classes, seed=seed,
                                   normalize=normalize, name=schema.name, duplicate=duplicate)
