"""Brute-force reference implementation.

Materialises the join with nested loops, one-hot encodes every component
over the full Cartesian product of active domains and evaluates Sigma, c
and s_Y literally.  Deliberately shares no code with the factorized path
beyond the component descriptions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .catalog import CATEGORICAL
from .errors import EmptyTrainingSet, SingularSystem
from .gram import ComponentLayout, GramSystem
from .planner import Component, Monomial
from .storage import Relation


@dataclass
class MaterializedJoin:
    variables: tuple[str, ...]
    tuples: list[dict]

    @property
    def count(self) -> int:
        return len(self.tuples)


def materialize_join(relations: Sequence[Relation]) -> MaterializedJoin:
    """Natural join of all relations by nested loops."""
    partial: list[dict] = [{}]
    names: list[str] = []
    for rel in relations:
        rows = rel.rows()
        out = []
        for t in partial:
            for row in rows:
                if all(t.get(v, val) == val for v, val in zip(rel.variables, row)):
                    merged = dict(t)
                    merged.update(zip(rel.variables, row))
                    out.append(merged)
        partial = out
        names += [v for v in rel.variables if v not in names]
    return MaterializedJoin(tuple(names), partial)


def brute_force_aggregate(join: MaterializedJoin, monomial: Monomial,
                          group_by: Sequence[str]) -> dict[tuple, float]:
    """``SUM(prod of continuous powers) GROUP BY group_by`` over the join."""
    out: dict[tuple, float] = {}
    for t in join.tuples:
        payload = 1.0
        for v, e in monomial.powers:
            if v not in group_by:
                payload *= float(t[v]) ** e
        key = tuple(t[v] for v in group_by)
        out[key] = out.get(key, 0.0) + payload
    return out


def active_domains(join: MaterializedJoin, kinds: Mapping[str, str]) -> dict[str, list]:
    return {v: sorted({t[v] for t in join.tuples}) for v in join.variables
            if kinds.get(v) == CATEGORICAL}


class DenseIndex:
    """One coordinate per (component, full key combination)."""

    def __init__(self, components: Sequence[Component], domains: Mapping[str, list]):
        self.components = list(components)
        self.slots: list[tuple[int, tuple]] = []
        self.position: dict[tuple[int, tuple], int] = {}
        for i, comp in enumerate(self.components):
            for key in itertools.product(*(domains[v] for v in comp.categorical)):
                self.position[(i, key)] = len(self.slots)
                self.slots.append((i, key))

    @property
    def size(self) -> int:
        return len(self.slots)


def feature_vector(t: dict, index: DenseIndex) -> np.ndarray:
    """h(x) for one join tuple, one-hot expanded."""
    h = np.zeros(index.size)
    for i, comp in enumerate(index.components):
        value = 1.0
        for v in comp.variables:
            if v not in comp.categorical:
                value *= float(t[v])
        key = tuple(t[v] for v in comp.categorical)
        h[index.position[(i, key)]] += value
    return h


@dataclass
class DenseGram:
    Sigma: np.ndarray
    c: np.ndarray
    sY: float
    index: DenseIndex
    count: int


def dense_gram(join: MaterializedJoin, components: Sequence[Component], response: str | None,
               domains: Mapping[str, list]) -> DenseGram:
    if join.count == 0:
        raise EmptyTrainingSet("the join is empty")
    index = DenseIndex(components, domains)
    n = index.size
    Sigma = np.zeros((n, n))
    c = np.zeros(n)
    sy = 0.0
    for t in join.tuples:
        h = feature_vector(t, index)
        Sigma += np.outer(h, h)
        if response is not None:
            y = float(t[response])
            c += y * h
            sy += y * y
    return DenseGram(Sigma / join.count, c / join.count, sy / join.count, index, join.count)


def ridge_closed_form(dense: DenseGram, lam: float) -> np.ndarray:
    """Solve ``(Sigma + lambda I) theta = c``."""
    A = dense.Sigma + lam * np.eye(len(dense.c))
    if len(dense.c) and np.linalg.matrix_rank(A) < len(dense.c):
        raise SingularSystem("Sigma + lambda I is singular")
    theta = np.linalg.solve(A, dense.c)
    if len(theta) and np.max(np.abs(A @ theta - dense.c)) > 1e-10:
        theta = theta + np.linalg.solve(A, dense.c - A @ theta)
    return theta


def dense_J(dense: DenseGram, theta: np.ndarray, lam: float) -> float:
    return float(0.5 * theta @ dense.Sigma @ theta - theta @ dense.c + 0.5 * dense.sY
                 + 0.5 * lam * theta @ theta)


def expand_vector(layout: ComponentLayout, vec: np.ndarray, index: DenseIndex) -> np.ndarray:
    """Scatter a component-space vector into the dense coordinates."""
    out = np.zeros(index.size)
    for i in range(len(layout.components)):
        block = layout.block(vec, i)
        for key, value in zip(layout.keys[i], block):
            out[index.position[(i, key)]] = value
    return out


def expand_gram(system: GramSystem, index: DenseIndex) -> DenseGram:
    """Dense Sigma / c / s_Y from the sparse system, cell by cell."""
    n = index.size
    Sigma = np.zeros((n, n))
    c = np.zeros(n)
    comps = system.components
    for agg in system.aggregates:
        gb = agg.group_by
        for key, payload in zip(agg.keys, agg.payload):
            env = dict(zip(gb, key))
            for i, j in agg.sigma_cells:
                a = index.position[(i, tuple(env[v] for v in comps[i].categorical))]
                b = index.position[(j, tuple(env[v] for v in comps[j].categorical))]
                Sigma[a, b] += payload
                if a != b or i != j:
                    Sigma[b, a] += payload
            for i in agg.c_cells:
                c[index.position[(i, tuple(env[v] for v in comps[i].categorical))]] += payload
    return DenseGram(Sigma / system.count, c / system.count, system.sy_raw / system.count,
                     index, int(system.count))


def fama_dense_g(theta_blocks: Mapping, components: Sequence[Component],
                 index: DenseIndex) -> np.ndarray:
    """Materialise g(theta) for a factorization machine.

    ``theta_blocks`` maps a degree-1 component name to ``{key: weight}`` and
    each feature name (prefixed ``"V:"``) to ``{value key: rank vector}``.
    """
    g = np.zeros(index.size)
    for (i, key), pos in index.position.items():
        comp = components[i]
        if comp.is_interaction:
            a, b = comp.variables
            ka = (key[comp.categorical.index(a)],) if a in comp.categorical else ()
            kb = (key[comp.categorical.index(b)],) if b in comp.categorical else ()
            va = theta_blocks["V:" + a].get(ka)
            vb = theta_blocks["V:" + b].get(kb)
            if va is not None and vb is not None:
                g[pos] = float(np.dot(va, vb))
        else:
            g[pos] = theta_blocks[comp.name].get(key, 0.0)
    return g


def predict(join: MaterializedJoin, g: np.ndarray, index: DenseIndex) -> np.ndarray:
    """<g, h(x)> for every join tuple."""
    return np.array([float(feature_vector(t, index) @ g) for t in join.tuples])
