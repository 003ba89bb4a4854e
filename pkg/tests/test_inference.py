import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semlearn.inference import (
    EdgeSample,
    bh_adjust,
    binomial_test,
    centralities,
    edge_binomial_screen,
    edge_fisher_screen,
    fisher_exact_one_sided,
    refined_network,
    write_edge_list,
)


def binomial_tail(s, n, p0):
    return sum(comb(n, j) * p0**j * (1 - p0) ** (n - j) for j in range(s, n + 1))


def fisher_enumeration(a, b, c, d):
    r1, c1, total = a + b, a + c, a + b + c + d
    denom = comb(total, c1)
    return sum(comb(r1, x) * comb(total - r1, c1 - x) for x in range(a, min(r1, c1) + 1)) / denom


def bh_scan(p, alpha):
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    r = 0
    for rank, i in enumerate(order, start=1):
        if p[i] <= rank * alpha / m:
            r = rank
    if r == 0:
        return set()
    cut = p[order[r - 1]]
    return {i for i in range(m) if p[i] <= cut}


def test_binomial_examples():
    assert binomial_test(0, 10) == 1.0
    assert binomial_test(52, 52) == pytest.approx(0.5**52, rel=1e-12)
    assert binomial_test(2, 3) == pytest.approx(0.5)


@given(st.integers(1, 60), st.data(), st.floats(0.05, 0.95))
def test_binomial_matches_sum(n, data, p0):
    s = data.draw(st.integers(0, n))
    assert abs(binomial_test(s, n, p0) - binomial_tail(s, n, p0)) < 1e-12


def test_binomial_monotone():
    p = [binomial_test(s, 30) for s in range(31)]
    assert np.all(np.diff(p) <= 0)


def test_fisher_examples():
    assert fisher_exact_one_sided(0, 0, 0, 0) == 1.0
    assert fisher_exact_one_sided(2, 0, 0, 2) == pytest.approx(1 / 6)


def test_fisher_exhaustive_small_margins():
    for a, b, c, d in itertools.product(range(7), repeat=4):
        if a + b > 12 or c + d > 12:
            continue
        assert abs(fisher_exact_one_sided(a, b, c, d) - fisher_enumeration(a, b, c, d)) < 1e-12


def test_bh_examples():
    assert bh_adjust([0.01, 0.02, 0.04, 0.5]).tolist() == [True, True, False, False]
    assert not bh_adjust([1.0] * 5).any()
    assert bh_adjust([0.04]).tolist() == [True]


def test_bh_matches_scan():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(1, 30))
        p = rng.uniform(size=m) ** rng.uniform(0.5, 4)
        assert set(np.flatnonzero(bh_adjust(p, 0.05))) == bh_scan(list(p), 0.05)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_bh_monotone_and_dominates_bonferroni(p):
    p = np.array(p)
    small, large = bh_adjust(p, 0.01), bh_adjust(p, 0.1)
    assert np.all(large[small])
    assert np.all(bh_adjust(p, 0.05)[p <= 0.05 / p.size])


def test_centrality_examples():
    cycle = np.zeros((3, 3), dtype=int)
    for i in range(3):
        cycle[(i + 1) % 3, i] = 1  # edge i -> i+1
    for v in centralities(cycle).values():
        assert v["betweenness"] == 1 and v["in_degree"] == v["out_degree"] == 1
    for v in centralities(np.zeros((4, 4), dtype=int)).values():
        assert v == {"out_degree": 0, "in_degree": 0, "betweenness": 0.0, "closeness": 0.0}
    star = np.zeros((5, 5), dtype=int)
    star[1:, 0] = 1  # center 0 -> leaves
    c = centralities(star)
    assert c[0]["out_degree"] == 4 and c[0]["betweenness"] == 0
    assert all(c[j]["in_degree"] == 1 for j in range(1, 5))
    assert c[0]["closeness"] == 1.0


def test_self_loops_ignored():
    adj = np.eye(3, dtype=int)
    adj[1, 0] = 1
    c = centralities(adj)
    assert c[0]["out_degree"] == 1 and c[1]["in_degree"] == 1


def test_identical_subjects_pipeline(tmp_path):
    adj = np.zeros((4, 4), dtype=int)
    adj[1, 0] = adj[2, 1] = 1
    sample = EdgeSample.from_adjacencies([adj] * 6)
    report = edge_binomial_screen(sample)
    assert report.pvalues[1, 0] == pytest.approx(0.5**6)
    assert report.rejected.sum() == 2 and report.rejected[1, 0]
    np.testing.assert_array_equal(sample.frequency, adj)
    fisher = edge_fisher_screen(sample, sample)
    assert np.all(fisher.pvalues == 1.0)
    assert not refined_network(report, fisher).any()
    path = tmp_path / "edges.csv"
    write_edge_list(path, report, sample)
    lines = path.read_text().splitlines()
    assert lines[0] == "src,dst,pvalue,freq" and lines[1].startswith("x1,x2,")


def test_report_rejections_below_threshold():
    rng = np.random.default_rng(4)
    adjs = [(rng.uniform(size=(6, 6)) < 0.8).astype(int) for _ in range(20)]
    report = edge_binomial_screen(EdgeSample.from_adjacencies(adjs))
    assert np.all(report.pvalues[report.rejected] <= 0.05)
