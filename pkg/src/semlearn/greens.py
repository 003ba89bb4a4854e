"""Green's kernels of ``d^k/dt^k`` and their quadrature transforms.

The canonical kernel is ``G^k(t, s) = (t - s)^{k-1} / (k-1)! * 1(t >= s)``;
``k = 0`` stands for the identity (Dirac) transform.  A perturbed kernel adds
``Phi_k(t)' v_k(s)`` with ``Phi_k(t) = (1, t, ..., t^{k-1})``.

Transforms use the trapezoid rule on the quadrature nodes.  For a transform
evaluated at node ``t_a`` only the nodes ``s <= t_a`` contribute and the node
``s = t_a`` carries the half-interval weight, which keeps the rule second
order for the step kernel ``k = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .exceptions import OrderError, ShapeError


@dataclass
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.nodes.shape != self.weights.shape:
            raise ShapeError("nodes and weights differ in length")

    @classmethod
    def from_nodes(cls, nodes):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ShapeError("quadrature nodes must be strictly increasing (at least 2)")
        h = np.diff(nodes)
        w = np.zeros(nodes.size)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return cls(nodes, w)

    @property
    def size(self):
        return self.nodes.size


def trapezoid_rule(c, n_nodes, start=0.0) -> QuadratureRule:
    """Even trapezoid rule with ``n_nodes`` nodes on ``[start, c]``."""
    return QuadratureRule.from_nodes(np.linspace(start, c, int(n_nodes)))


def null_basis(k, t):
    """``(1, t, ..., t^{k-1})``; for array ``t`` the result has shape ``(k, len(t))``."""
    if k < 1:
        raise OrderError("null-space basis needs k >= 1")
    t = np.asarray(t, dtype=float)
    return np.stack([t**j for j in range(k)])


@dataclass
class GreensKernel:
    """Kernel of order ``k``; ``perturbation`` is ``v_k`` sampled on ``nodes`` (shape ``(k, N)``)."""

    k: int
    perturbation: Optional[np.ndarray] = None
    nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.k < 0:
            raise OrderError("kernel order must be nonnegative")
        if self.perturbation is not None:
            if self.k == 0:
                raise OrderError("the identity transform admits no perturbation")
            self.perturbation = np.atleast_2d(np.asarray(self.perturbation, dtype=float))
            if self.perturbation.shape[0] != self.k:
                raise ShapeError(f"v_k needs {self.k} components, got {self.perturbation.shape[0]}")
            if self.nodes is None or np.shape(self.nodes)[0] != self.perturbation.shape[1]:
                raise ShapeError("perturbation must be sampled on the kernel's nodes")
            self.nodes = np.asarray(self.nodes, dtype=float)

    @property
    def perturbed(self):
        return self.perturbation is not None


def canonical_kernel(k):
    return GreensKernel(k)


def perturbed_greens(k, v_k, rule: QuadratureRule) -> GreensKernel:
    """Kernel ``G^k + Phi_k(t)' v_k(s)`` with ``v_k`` sampled on ``rule.nodes``."""
    v = np.atleast_2d(np.asarray(v_k, dtype=float))
    if v.shape[-1] != rule.size:
        raise ShapeError("v_k must be sampled on the rule nodes")
    return GreensKernel(k, v, rule.nodes)


def greens_value(kernel: GreensKernel, t, s):
    """Pointwise kernel value; perturbations are interpolated linearly in ``s``."""
    k = kernel.k
    if k == 0:
        raise OrderError("the order-0 kernel is a Dirac delta; use integral_transform")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    val = np.where(t >= s, (t - s) ** (k - 1) / factorial(k - 1), 0.0)
    if kernel.perturbed:
        v = np.array([np.interp(s, kernel.nodes, row) for row in kernel.perturbation])
        val = val + np.sum(null_basis(k, t) * v, axis=0)
    return val if val.ndim else float(val)


def _check_samples(samples, rule):
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] != rule.size:
        raise ShapeError(f"samples have {samples.shape[-1]} nodes, rule has {rule.size}")
    return samples


def transform_nodes(kernel: GreensKernel, samples, rule: QuadratureRule):
    """``int G^k(t_a, s) g(s) ds`` at every node ``t_a`` (vectorised over leading axes).

    The polynomial kernel is expanded binomially so each power of ``s`` needs
    one cumulative trapezoid sum; this is algebraically the kernel-weighted
    trapezoid rule truncated at ``s = t_a``.
    """
    samples = _check_samples(samples, rule)
    k = kernel.k
    if k == 0:
        return samples.copy()
    t = rule.nodes
    out = np.zeros(samples.shape)
    for j in range(k):
        cum = cumulative_trapezoid(samples * t**j, t, axis=-1, initial=0.0)
        out += comb(k - 1, j) * (-1.0) ** j * t ** (k - 1 - j) * cum
    out /= factorial(k - 1)
    if kernel.perturbed:
        out += perturbation_term(kernel, samples, rule)
    return out


def perturbation_term(kernel: GreensKernel, samples, rule: QuadratureRule):
    """``Phi_k(t)' int v_k(s) g(s) ds`` at every node."""
    moments = (samples[..., None, :] * kernel.perturbation) @ rule.weights  # (..., k)
    return np.einsum("...j,jn->...n", moments, null_basis(kernel.k, rule.nodes))


def integral_transform(kernel: GreensKernel, samples, rule: QuadratureRule, t):
    """Transform at a single time ``t``.

    Off-node ``t`` inserts ``t`` into the rule with a linearly interpolated
    sample, so accuracy there is limited by the interpolation.
    """
    samples = _check_samples(samples, rule)
    nodes = rule.nodes
    t = float(t)
    pos = np.searchsorted(nodes, t)
    on_node = pos < nodes.size and nodes[pos] == t
    if kernel.k == 0:
        return float(samples[pos]) if on_node else float(np.interp(t, nodes, samples))
    if on_node:
        s, g = nodes[: pos + 1], samples[: pos + 1]
    else:
        s = np.append(nodes[:pos], t)
        g = np.append(samples[:pos], np.interp(t, nodes, samples))
    k = kernel.k
    val = 0.0
    if s.size > 1:
        val = float(np.trapezoid((t - s) ** (k - 1) / factorial(k - 1) * g, s))
    if kernel.perturbed:
        moments = kernel.perturbation @ (rule.weights * samples)
        val += float(null_basis(k, t) @ moments)
    return val
