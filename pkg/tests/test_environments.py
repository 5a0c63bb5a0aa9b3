import math

import numpy as np
import pytest

from fnucb import environments as E
from fnucb import network as nw


def test_synthetic_contexts_unit_and_replayable():
    env = E.SyntheticEnv("cosine", seed=3)
    X, h = env.draw(5, 1)
    assert X.shape == (4, 10)
    assert np.all(np.abs(np.linalg.norm(X, axis=1) - 1) <= 1e-9)
    X2, h2 = E.SyntheticEnv("cosine", seed=3).draw(5, 1)
    assert np.array_equal(X, X2) and np.array_equal(h, h2)
    assert not np.array_equal(X, env.draw(5, 0)[0])


def test_hidden_parameter_is_unit():
    for kind in ("cosine", "square"):
        assert np.linalg.norm(E.SyntheticEnv(kind, seed=1).a) == pytest.approx(1.0)


def test_reward_closed_forms():
    a = np.zeros(10)
    a[0] = 1.0
    cos = E.SyntheticEnv("cosine", a=a, sigma=0.0)
    x = np.zeros(10)
    x[1] = 1.0
    assert cos.reward(x) == (1.0, 1.0)
    sq = E.SyntheticEnv("square", a=a)
    assert sq.reward(a)[1] == pytest.approx(10.0)
    assert E.SyntheticEnv("square", a=a, sigma=0.0).reward(a, 1, 0) == (10.0, 10.0)


def test_noise_and_isolation():
    env = E.SyntheticEnv("cosine", seed=0, sigma=0.01)
    ys = np.array([env.observe(0.0, t, 0) for t in range(1, 2001)])
    assert abs(ys.std() - 0.01) < 0.001
    # noise stream does not depend on anything the learner does
    assert env.observe(0.5, 7, 1) == E.SyntheticEnv("cosine", seed=0).observe(0.5, 7, 1)


def test_foreign_context_rejected():
    env = E.SyntheticEnv("cosine", seed=0)
    with pytest.raises(E.ContextError):
        env.reward(np.ones(10))
    ds = E.ClassificationBanditEnv(features=np.eye(3), labels=[0, 1, 1], n_classes=2)
    with pytest.raises(E.ContextError):
        ds.reward(np.ones(6), 1, 0)


def test_duplicate_transform():
    rng = np.random.default_rng(0)
    x = E.unit_sphere(rng, 1, 5)[0]
    z = E.duplicate_transform(x)
    assert abs(np.linalg.norm(z) - 1) <= 1e-12
    assert np.array_equal(z[:5], z[5:])
    s = nw.NetworkShape(10, 20, 2)
    assert abs(nw.forward(s, nw.init_params(s, 4), z)) <= 1e-12
    with pytest.raises(E.ContextError):
        E.duplicate_transform(np.zeros(3))


def test_duplicated_env():
    env = E.SyntheticEnv("square", d=4, seed=2, duplicate=True)
    X, h = env.draw(1, 0)
    assert X.shape == (4, 8) and np.allclose(X[:, :4], X[:, 4:])
    assert np.allclose(env.true_reward(X), h)


SHUTTLE_ROWS = """\
50 21 77 0 28 0 27 48 22 2
55 0 81 0 -6 11 25 88 64 4
37 0 76 0 18 0 39 58 20 1
53 0 82 0 52 -5 29 30 2 1
"""

MAGIC_ROWS = """\
28.8,16.0,2.6,0.39,0.19,27.7,22.0,-8.2,40.0,81.8,g
31.6,11.7,2.5,0.53,0.37,26.2,23.8,-9.9,6.3,205.2,g
162.0,136.0,4.06,0.03,0.01,-64.8,-45.2,-0.1,76.9,256.7,h
"""


def test_shuttle_fixture(tmp_path):
    p = tmp_path / "shuttle.trn"
    p.write_text(SHUTTLE_ROWS)
    env = E.ingest_dataset(p, "shuttle", seed=0)
    assert (env.K, env.d, env.context_dim) == (7, 9, 63)
    for t in range(1, 20):
        X, h = env.draw(t, 0)
        assert X.shape == (7, 63)
        assert np.all(np.count_nonzero(X, axis=1) <= 9)
        assert h.sum() == 1 and set(h) <= {0.0, 1.0}
        assert np.allclose(np.linalg.norm(X, axis=1), 1)
        for k in range(7):
            nz = np.flatnonzero(X[k])
            assert nz.min() >= 9 * k and nz.max() < 9 * (k + 1)
        k = int(np.argmax(h))
        assert env.reward(X[k], t, 0) == (1.0, 1.0)


def test_magic_fixture(tmp_path):
    p = tmp_path / "magic.data"
    p.write_text(MAGIC_ROWS)
    env = E.ingest_dataset(p, "magic")
    assert (env.K, env.d, env.context_dim) == (2, 10, 20)
    labels = {int(np.argmax(env.draw(t, 0)[1])) for t in range(1, 40)}
    assert labels == {0, 1}


def test_three_row_toy(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text("1,0,0\n0,1,1\n3,4,1\n")
    schema = E.DatasetSchema("toy", 2, 2, [0, 1], 2)
    env = E.ingest_dataset(p, schema)
    X, h = env.draw(1, 0)
    assert X.shape == (2, 4)
    row = X[0, :2]
    lab = {(1.0, 0.0): 0, (0.0, 1.0): 1, (0.6, 0.8): 1}[tuple(np.round(row, 12))]
    assert h[lab] == 1 and h[1 - lab] == 0


def test_data_root_override(tmp_path, monkeypatch):
    (tmp_path / "toy.csv").write_text("1,0,0\n")
    monkeypatch.setenv(E.DATA_ROOT_ENV, str(tmp_path))
    env = E.ingest_dataset("toy.csv", E.DatasetSchema("toy", 2, 2, [0, 1], 2))
    assert len(env.features) == 1


@pytest.mark.parametrize("text,msg", [
    ("", "no data rows"),
    ("1,2\n", "expected at least 3 columns"),
    ("1,x,0\n", "non-numeric"),
    ("1,2,5\n", "outside"),
])
def test_dataset_errors(tmp_path, text, msg):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(E.DatasetError, match=msg):
        E.ingest_dataset(p, E.DatasetSchema("toy", 2, 2, [0, 1], 2))


def test_schema_unknown_key():
    with pytest.raises(E.DatasetError):
        E.DatasetSchema.from_dict({"name": "x", "n_features": 1, "n_classes": 2, "features": [0],
                                   "label": 1, "colour": "red"})
    s = E.DatasetSchema.from_dict(E.MAGIC_SCHEMA.to_dict())
    assert s == E.MAGIC_SCHEMA


def test_sample_domain_unit():
    env = E.SyntheticEnv("cosine", seed=0)
    X = env.sample_domain(50, np.random.default_rng(0))
    assert np.allclose(np.linalg.norm(X, axis=1), 1)
