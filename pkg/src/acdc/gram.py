"""The sparse Gram system (Sigma, c, s_Y) and the tensor-aware products the
solver needs.

Sigma is never expanded.  Each distinct aggregate keeps its raw payloads
and the list of Sigma / c cells it serves; products gather parameter
values at the aggregate's entries and scatter-add into the output block.
All payloads are raw sums; division by the join size happens once, at use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .aggregator import AggregateMap
from .errors import EmptyTrainingSet, LayoutMismatch
from .planner import AggregatePlan, Component, Monomial


class ComponentLayout:
    """Key space of every component block, laid end to end in one vector.

    A block is indexed by the observed key tuples of its categorical
    variables (a single ``()`` key when it has none).
    """

    def __init__(self, components: Sequence[Component], keys: Sequence[Sequence[tuple]]):
        self.components = list(components)
        self.keys = [list(k) for k in keys]
        self.index = [{key: i for i, key in enumerate(k)} for k in self.keys]
        sizes = [len(k) for k in self.keys]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.size = int(self.offsets[-1])
        self.by_name = {c.name: i for i, c in enumerate(self.components)}

    def block(self, vec: np.ndarray, i: int) -> np.ndarray:
        return vec[self.offsets[i]:self.offsets[i + 1]]

    def block_size(self, i: int) -> int:
        return len(self.keys[i])

    def domain(self, variable: str) -> list[tuple]:
        """Observed values of a feature variable (its degree-1 block keys)."""
        return self.keys[self.by_name[variable]]

    def positions(self, i: int, keys: Sequence[tuple]) -> np.ndarray:
        idx = self.index[i]
        try:
            return np.fromiter((idx[k] for k in keys), dtype=np.int64, count=len(keys))
        except KeyError as exc:
            raise LayoutMismatch(f"key {exc} not in the layout of "
                                 f"{self.components[i].name}") from None

    def to_dict(self, vec: np.ndarray) -> dict[str, dict[tuple, float]]:
        return {c.name: dict(zip(self.keys[i], self.block(vec, i).tolist()))
                for i, c in enumerate(self.components)}


def _restrict(keys: Sequence[tuple], group_by: Sequence[str], sub: Sequence[str]) -> list[tuple]:
    where = [group_by.index(v) for v in sub]
    return [tuple(k[w] for w in where) for k in keys]


@dataclass(eq=False)
class CompiledAggregate:
    """A distinct aggregate with the index arrays of every cell it serves."""

    monomial: Monomial
    group_by: tuple[str, ...]
    keys: list[tuple]
    payload: np.ndarray
    sigma_cells: list[tuple[int, int]]
    c_cells: list[int]
    comp_index: dict[int, np.ndarray] = field(default_factory=dict)
    var_index: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.keys)


class ParamBlocks:
    """Values of g(theta) (or any vector) in component space.

    ``flat`` holds the plain blocks laid out by :class:`ComponentLayout`.
    ``factored`` maps an interaction component to a pair of variables whose
    rank-r factor matrices live in ``factors``; such a block equals
    ``sum_l factors[a][:, l] (x) factors[b][:, l]`` and is only ever evaluated
    at the aggregate entries that touch it.
    """

    def __init__(self, flat: np.ndarray, factored: Mapping[int, tuple[str, str]] | None = None,
                 factors: Mapping[str, np.ndarray] | None = None):
        self.flat = np.asarray(flat, dtype=np.float64)
        self.factored = dict(factored or {})
        self.factors = dict(factors or {})

    def at(self, layout: ComponentLayout, agg: CompiledAggregate, comp: int) -> np.ndarray:
        """Block ``comp`` evaluated at each entry of ``agg`` (restricted key)."""
        pair = self.factored.get(comp)
        if pair is None:
            return self.flat[layout.offsets[comp] + agg.comp_index[comp]]
        a, b = pair
        fa = self.factors[a][agg.var_index[a]]
        fb = self.factors[b][agg.var_index[b]]
        return np.einsum("ij,ij->i", fa, fb)


class GramSystem:
    def __init__(self, layout: ComponentLayout, aggregates: list[CompiledAggregate],
                 count: float, sy_raw: float, variable_domains: dict[str, list[tuple]]):
        self.layout = layout
        self.components = layout.components
        self.aggregates = aggregates
        self.count = count
        self.sy_raw = sy_raw
        self.variable_domains = variable_domains
        self.sigma_products = 0

    @property
    def size(self) -> int:
        return self.layout.size

    @property
    def distinct_aggregates(self) -> int:
        return len(self.aggregates)

    @property
    def total_entries(self) -> int:
        return sum(len(a) for a in self.aggregates)

    def check(self, g: ParamBlocks) -> None:
        if g.flat.shape != (self.layout.size,):
            raise LayoutMismatch(f"expected a vector of length {self.layout.size}, "
                                 f"got shape {g.flat.shape}")


def assemble(root_maps: Mapping[Monomial, AggregateMap], plan: AggregatePlan) -> GramSystem:
    """Match root aggregates to their Sigma / c cells and compile index arrays."""
    count_map = root_maps[plan.count_monomial]
    count = count_map.get(())
    if count <= 0:
        raise EmptyTrainingSet("the feature extraction query is empty")
    comps = plan.components

    diag: dict[int, Monomial] = {}
    for m, cells in plan.sigma_cells.items():
        for i, j in cells:
            if i == j:
                diag[i] = m
    claimed = sorted(c for m in plan.monomials for c in plan.sigma_cells[m])
    expected = [(i, j) for i in range(len(comps)) for j in range(i, len(comps))]
    if claimed != expected:
        raise LayoutMismatch("Sigma cells are not covered exactly once")
    if plan.response is not None:
        c_claimed = sorted(i for m in plan.monomials for i in plan.c_cells[m])
        if c_claimed != list(range(len(comps))):
            raise LayoutMismatch("c cells are not covered exactly once")

    block_keys = []
    for i, comp in enumerate(comps):
        agg = root_maps[diag[i]]
        block_keys.append(_restrict(agg.keys(), agg.group_by, comp.categorical))
    layout = ComponentLayout(comps, block_keys)

    domains: dict[str, list[tuple]] = {}
    for i, comp in enumerate(comps):
        if len(comp.variables) == 1:
            domains[comp.variables[0]] = layout.keys[i]

    compiled = []
    for m in plan.monomials:
        sig, cc = plan.sigma_cells[m], plan.c_cells[m]
        if not sig and not cc:
            continue
        amap = root_maps[m]
        items = amap.items()
        keys = [k for k, _ in items]
        agg = CompiledAggregate(m, amap.group_by, keys,
                                np.array([p for _, p in items], dtype=np.float64), sig, cc)
        for comp in {i for cell in sig for i in cell} | set(cc):
            sub = _restrict(keys, amap.group_by, comps[comp].categorical)
            agg.comp_index[comp] = layout.positions(comp, sub)
        for v in {v for comp in agg.comp_index for v in comps[comp].variables}:
            if v in amap.group_by:
                dom = {k: n for n, k in enumerate(domains[v])} if v in domains else {}
                sub = _restrict(keys, amap.group_by, (v,))
                if dom:
                    agg.var_index[v] = np.fromiter((dom[k] for k in sub), np.int64, len(sub))
            else:
                agg.var_index[v] = np.zeros(len(keys), dtype=np.int64)
        compiled.append(agg)

    sy = root_maps[plan.response_square].get(()) if plan.response_square is not None else 0.0
    return GramSystem(layout, compiled, count, sy, domains)


# -- products --------------------------------------------------------------

def sigma_times_g(system: GramSystem, g: ParamBlocks) -> ParamBlocks:
    """``p = Sigma g`` in component space, normalised by the join size."""
    system.check(g)
    system.sigma_products += 1
    layout = system.layout
    p = np.zeros(layout.size)
    for agg in system.aggregates:
        if not agg.sigma_cells:
            continue
        vals: dict[int, np.ndarray] = {}
        for i, j in agg.sigma_cells:
            for a, b in ((i, j), (j, i)) if i != j else ((i, j),):
                gb = vals.get(b)
                if gb is None:
                    gb = vals[b] = g.at(layout, agg, b)
                out = layout.offsets[a]
                p[out:out + layout.block_size(a)] += np.bincount(
                    agg.comp_index[a], weights=agg.payload * gb,
                    minlength=layout.block_size(a))
    p /= system.count
    return ParamBlocks(p)


def quadratic_form(system: GramSystem, u: ParamBlocks, v: ParamBlocks) -> float:
    """``u^T Sigma v`` contracted entry-wise over the sparse aggregates."""
    system.check(u)
    system.check(v)
    system.sigma_products += 1
    layout = system.layout
    total = 0.0
    for agg in system.aggregates:
        if not agg.sigma_cells:
            continue
        uc: dict[int, np.ndarray] = {}
        vc: dict[int, np.ndarray] = {}

        def get(cache, blocks, k):
            if k not in cache:
                cache[k] = blocks.at(layout, agg, k)
            return cache[k]

        acc = np.zeros(len(agg))
        for i, j in agg.sigma_cells:
            if i == j:
                acc += get(uc, u, i) * get(vc, v, j)
            else:
                acc += get(uc, u, i) * get(vc, v, j) + get(uc, u, j) * get(vc, v, i)
        total += float(np.dot(agg.payload, acc))
    return total / system.count


def dot_c(system: GramSystem, u: ParamBlocks) -> float:
    """``<u, c>`` with c normalised by the join size."""
    system.check(u)
    layout = system.layout
    total = 0.0
    for agg in system.aggregates:
        for i in agg.c_cells:
            total += float(np.dot(agg.payload, u.at(layout, agg, i)))
    return total / system.count


def c_vector(system: GramSystem) -> np.ndarray:
    """c laid out in component space."""
    layout = system.layout
    c = np.zeros(layout.size)
    for agg in system.aggregates:
        for i in agg.c_cells:
            out = layout.offsets[i]
            c[out:out + layout.block_size(i)] += np.bincount(
                agg.comp_index[i], weights=agg.payload, minlength=layout.block_size(i))
    return c / system.count


def sY(system: GramSystem) -> float:
    """Mean squared response."""
    return system.sy_raw / system.count
