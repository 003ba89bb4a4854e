"""Candidate feature libraries: constant, per-variable sin/cos, monomials."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from math import comb
from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ShapeError

KINDS = ("constant", "monomial", "sine", "cosine")


@dataclass(frozen=True)
class FeatureDescriptor:
    kind: str
    exponents: Tuple[int, ...] = ()
    variable: Optional[int] = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.kind == "monomial" and sum(self.exponents) < 1:
            raise ValueError("monomial features need total degree >= 1")
        if self.kind in ("sine", "cosine") and self.variable is None:
            raise ValueError("trigonometric features reference one variable")


def depends_on(feature: FeatureDescriptor, j: int) -> bool:
    """True iff the feature varies with variable ``j`` (0-based)."""
    if feature.kind == "constant":
        return False
    if feature.kind == "monomial":
        return j < len(feature.exponents) and feature.exponents[j] > 0
    return feature.variable == j


class BasisLibrary:
    """Ordered list of features over ``p`` state variables (plus optional time)."""

    def __init__(self, p, features, include_time=False, names=None):
        self.p = int(p)
        self.include_time = bool(include_time)
        self.features = list(features)
        labels = [f.label for f in self.features]
        if len(set(labels)) != len(labels):
            raise ValueError("feature labels must be unique")
        self.names = list(names) if names is not None else _variable_names(self.p, self.include_time)

    @property
    def D(self):
        return len(self.features)

    @property
    def labels(self):
        return [f.label for f in self.features]

    @property
    def n_variables(self):
        return self.p + int(self.include_time)

    def _stack(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.p:
            raise ShapeError(f"state has {x.shape[0]} variables, library expects {self.p}")
        if self.include_time:
            tt = np.broadcast_to(np.asarray(t, dtype=float), x.shape[1:])
            x = np.concatenate([x, tt[None]], axis=0)
        return x

    def evaluate(self, x, t=0.0):
        """Feature values; ``x`` has shape ``(p, ...)``, result ``(D, ...)``."""
        z = self._stack(x, t)
        out = np.empty((self.D,) + z.shape[1:])
        for d, f in enumerate(self.features):
            if f.kind == "constant":
                out[d] = 1.0
            elif f.kind == "sine":
                out[d] = np.sin(z[f.variable])
            elif f.kind == "cosine":
                out[d] = np.cos(z[f.variable])
            else:
                val = np.ones(z.shape[1:])
                for v, e in enumerate(f.exponents):
                    if e:
                        val = val * z[v] ** e
                out[d] = val
        return out

    def dependency_matrix(self):
        """Boolean ``(D, p)`` matrix: feature d depends on state variable j."""
        return np.array([[depends_on(f, j) for j in range(self.p)] for f in self.features], dtype=bool).reshape(
            self.D, self.p
        )

    def to_dict(self):
        return {
            "p": self.p,
            "include_time": self.include_time,
            "names": self.names,
            "features": [
                {"kind": f.kind, "exponents": list(f.exponents), "variable": f.variable, "label": f.label}
                for f in self.features
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data):
        feats = [
            FeatureDescriptor(d["kind"], tuple(d["exponents"]), d["variable"], d["label"]) for d in data["features"]
        ]
        return cls(data["p"], feats, include_time=data["include_time"], names=data.get("names"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, BasisLibrary) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"BasisLibrary(p={self.p}, D={self.D}, labels={self.labels})"


def _variable_names(p, include_time):
    names = [f"x{i + 1}" for i in range(p)]
    return names + ["t"] if include_time else names


def _monomial_label(exponents, names):
    parts = []
    for v, e in enumerate(exponents):
        if e == 1:
            parts.append(names[v])
        elif e > 1:
            parts.append(f"{names[v]}^{e}")
    return "*".join(parts)


def poly_trig_library(p, P, include_trig=True, include_time=False) -> BasisLibrary:
    """Constant, sin and cos of each variable, then monomials of degree 1..P.

    Monomials of each degree follow graded-lexicographic order, e.g. for two
    variables: ``x1, x2, x1^2, x1*x2, x2^2``.
    """
    if P < 1:
        raise ValueError("max degree P must be >= 1")
    names = _variable_names(p, include_time)
    nv = len(names)
    feats = [FeatureDescriptor("constant", label="1")]
    if include_trig:
        feats += [FeatureDescriptor("sine", variable=v, label=f"sin({names[v]})") for v in range(nv)]
        feats += [FeatureDescriptor("cosine", variable=v, label=f"cos({names[v]})") for v in range(nv)]
    for deg in range(1, P + 1):
        for combo in itertools.combinations_with_replacement(range(nv), deg):
            exps = [0] * nv
            for v in combo:
                exps[v] += 1
            feats.append(FeatureDescriptor("monomial", tuple(exps), label=_monomial_label(exps, names)))
    return BasisLibrary(p, feats, include_time=include_time, names=names)


def library_size(p, P, include_trig=True, include_time=False):
    """Closed-form feature count of :func:`poly_trig_library`."""
    nv = p + int(include_time)
    return 1 + 2 * nv * int(include_trig) + sum(comb(nv + d - 1, d) for d in range(1, P + 1))


class PolyTrigFeatures(TransformerMixin, BaseEstimator):
    """sklearn transformer wrapping :func:`poly_trig_library`.

    ``X`` is ``(n_samples, n_variables)``; with ``include_time`` the last column
    is taken as time.
    """

    def __init__(self, degree=2, include_trig=True, include_time=False):
        self.degree = degree
        self.include_trig = include_trig
        self.include_time = include_time

    def fit(self, X, y=None):
        X = check_array(X)
        p = X.shape[1] - int(self.include_time)
        self.library_ = poly_trig_library(p, self.degree, self.include_trig, self.include_time)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "library_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        p = self.library_.p
        t = X[:, p] if self.include_time else 0.0
        return self.library_.evaluate(X[:, :p].T, t).T

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "library_")
        return np.asarray(self.library_.labels, dtype=object)
