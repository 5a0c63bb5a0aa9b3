import re
from collections import OrderedDict

import numpy as np
import pytest

from fnucb.plotting import emit_plot, read_summary


def groups():
    t = np.arange(1, 51)
    return OrderedDict([
        ("fn-ucb_N2", {"t": t, "mean": np.sqrt(t), "stderr": 0.1 * np.ones(50)}),
        ("fn-ucb_N1", {"t": t, "mean": 2 * np.sqrt(t), "stderr": np.zeros(50)}),
    ])


def test_byte_identical(tmp_path):
    emit_plot(groups(), tmp_path / "a.svg", title="x")
    emit_plot(groups(), tmp_path / "b.svg", title="x")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_line_gid_and_monotone_path(tmp_path):
    emit_plot(groups(), tmp_path / "a.svg")
    svg = (tmp_path / "a.svg").read_text()
    m = re.search(r'<g id="fn-ucb_N1">.*?<path d="([^"]+)"', svg, re.S)
    assert m
    ys = [float(v) for v in re.findall(r"[ML] [\d.]+ ([\d.]+)", m.group(1))]
    # SVG y grows downward, so a rising curve has non-increasing y
    assert len(ys) > 10 and all(b <= a + 1e-9 for a, b in zip(ys, ys[1:]))


def test_read_summary(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("group,policy,N,D,t,mean,stderr,n_seeds\na,fn-ucb,1,0,1,0.5,0.1,3\na,fn-ucb,1,0,2,1.5,0.2,3\n")
    g = read_summary(p)
    assert list(g) == ["a"] and np.array_equal(g["a"]["mean"], [0.5, 1.5])
    p.write_text("group,t\n")
    with pytest.raises(ValueError):
        read_summary(p)
    with pytest.raises(ValueError):
        emit_plot(OrderedDict(), tmp_path / "x.svg")
