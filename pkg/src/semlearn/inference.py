"""Population-level edge tests on per-subject adjacency matrices."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.stats import binom, hypergeom

from .exceptions import ShapeError


def binomial_test(successes, trials, p0=0.5):
    """One-sided exact tail ``P[Bin(trials, p0) >= successes]``."""
    if not 0 <= successes <= trials or trials < 1:
        raise ValueError("need 0 <= successes <= trials and trials >= 1")
    if successes == 0:
        return 1.0
    return float(binom.sf(successes - 1, trials, p0))


def fisher_exact_one_sided(a, b, c, d):
    """One-sided Fisher test for the table ``[[a, b], [c, d]]`` (rows: task, baseline).

    Returns ``P[A >= a]`` under the hypergeometric law with fixed margins,
    i.e. evidence that the first row's success rate is larger.
    """
    a, b, c, d = (int(v) for v in (a, b, c, d))
    if min(a, b, c, d) < 0:
        raise ValueError("table counts must be nonnegative")
    total = a + b + c + d
    if total == 0:
        return 1.0
    # population total, successes a+c, draws a+b
    return float(min(1.0, hypergeom.sf(a - 1, total, a + c, a + b)))


def bh_adjust(pvalues, alpha=0.05):
    """Benjamini-Hochberg step-up; boolean rejection mask in input order."""
    p = np.asarray(pvalues, dtype=float).ravel()
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.sort(p)
    below = np.flatnonzero(order <= alpha * np.arange(1, m + 1) / m)
    if below.size == 0:
        return np.zeros(m, dtype=bool)
    return p <= order[below[-1]]


@dataclass
class EdgeSample:
    counts: np.ndarray
    trials: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeError("counts must be a square matrix")
        if self.trials < 1 or np.any(self.counts < 0) or np.any(self.counts > self.trials):
            raise ValueError("counts must lie in [0, trials]")

    @classmethod
    def from_adjacencies(cls, adjacencies):
        stack = np.asarray([np.asarray(a, dtype=int) != 0 for a in adjacencies])
        return cls(stack.sum(axis=0), stack.shape[0])

    @property
    def frequency(self):
        return self.counts / self.trials


@dataclass
class TestReport:
    pvalues: np.ndarray
    rejected: np.ndarray
    alpha: float
    method: str
    candidates: np.ndarray = field(default=None)

    def to_dict(self):
        return {
            "method": self.method,
            "alpha": float(self.alpha),
            "pvalues": np.asarray(self.pvalues, dtype=float).tolist(),
            "rejected": np.asarray(self.rejected, dtype=int).tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _screen(pvalues, candidates, alpha, method):
    rejected = np.zeros(pvalues.shape, dtype=bool)
    if np.any(candidates):
        rejected[candidates] = bh_adjust(pvalues[candidates], alpha)
    return TestReport(pvalues, rejected, alpha, method, candidates)


def edge_binomial_screen(sample: EdgeSample, alpha=0.05, p0=0.5, candidates=None):
    """Per-edge binomial test of ``P(edge) > p0`` with BH over the candidate edges.

    Candidates default to edges observed in at least one subject.
    """
    p = sample.counts.shape[0]
    pv = np.ones((p, p))
    for i in range(p):
        for j in range(p):
            pv[i, j] = binomial_test(int(sample.counts[i, j]), sample.trials, p0)
    if candidates is None:
        candidates = sample.counts > 0
    return _screen(pv, np.asarray(candidates, dtype=bool), alpha, "binomial-bh")


def edge_fisher_screen(task: EdgeSample, baseline: EdgeSample, alpha=0.05, candidates=None):
    """Per-edge one-sided Fisher test of task frequency > baseline frequency, BH-screened."""
    if task.counts.shape != baseline.counts.shape:
        raise ShapeError("task and baseline networks differ in size")
    p = task.counts.shape[0]
    pv = np.ones((p, p))
    for i in range(p):
        for j in range(p):
            a = int(task.counts[i, j])
            c = int(baseline.counts[i, j])
            pv[i, j] = fisher_exact_one_sided(a, task.trials - a, c, baseline.trials - c)
    if candidates is None:
        candidates = (task.counts + baseline.counts) > 0
    return _screen(pv, np.asarray(candidates, dtype=bool), alpha, "fisher-bh")


def refined_network(binomial: TestReport, fisher: TestReport):
    """Edges kept by both screens."""
    return np.asarray(binomial.rejected, dtype=bool) & np.asarray(fisher.rejected, dtype=bool)


def write_edge_list(path, report: TestReport, sample: EdgeSample, names=None, mask=None):
    """CSV ``src,dst,pvalue,freq`` for kept edges; ``e[i, j]`` is the edge ``j -> i``."""
    mask = report.rejected if mask is None else mask
    p = sample.counts.shape[0]
    names = names or [f"x{k + 1}" for k in range(p)]
    freq = sample.frequency
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "pvalue", "freq"])
        for i, j in zip(*np.nonzero(mask)):
            w.writerow([names[j], names[i], repr(float(report.pvalues[i, j])), repr(float(freq[i, j]))])


def to_digraph(adj):
    """Directed graph with an edge ``j -> i`` for every ``adj[i, j] = 1``; self-loops dropped."""
    adj = np.asarray(adj)
    g = nx.DiGraph()
    g.add_nodes_from(range(adj.shape[0]))
    g.add_edges_from((int(j), int(i)) for i, j in zip(*np.nonzero(adj)) if i != j)
    return g


def closeness(g):
    """Reachable-count over summed distances to reachable nodes; 0 if nothing is reachable."""
    out = {}
    for v in g.nodes:
        dist = nx.single_source_shortest_path_length(g, v)
        total = sum(dist.values())
        out[v] = (len(dist) - 1) / total if total > 0 else 0.0
    return out


def centralities(adj):
    """Per node: out-degree, in-degree, betweenness and closeness of the directed graph."""
    g = to_digraph(adj)
    btw = nx.betweenness_centrality(g, normalized=False)
    clo = closeness(g)
    return {
        v: {
            "out_degree": int(g.out_degree(v)),
            "in_degree": int(g.in_degree(v)),
            "betweenness": float(btw[v]),
            "closeness": float(clo[v]),
        }
        for v in g.nodes
    }
