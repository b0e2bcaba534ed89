"""Factorized, shared computation of all registered aggregates.

One depth-first pass over the variable order.  At each node the values
common to all relations containing the node variable are enumerated by
sort-merge, the relation ranges are narrowed, the local power maps are
built and every register entry is updated with the tensor product of its
components.  Subtree results are cached under their ``dep`` assignment
whenever ``dep`` is a strict subset of the ancestors.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .catalog import CATEGORICAL
from .errors import LayoutMismatch
from .planner import Monomial, NodeRegister, Registers, VariableOrder, VONode
from .storage import Range, Relation, intersect_values, narrow_range

_DUMMY = 0


class AggregateMap:
    """Sparse map from group-by key tuples to 64-bit float payloads.

    Keys absent from the map have payload zero.  Iteration is in ascending
    key order.
    """

    __slots__ = ("group_by", "entries")

    def __init__(self, group_by: Sequence[str] = (), entries: Mapping | None = None):
        self.group_by = tuple(group_by)
        self.entries: dict[tuple, float] = dict(entries) if entries else {}

    def add(self, key: tuple, value: float) -> None:
        self.entries[key] = self.entries.get(key, 0.0) + value

    def get(self, key: tuple, default: float = 0.0) -> float:
        return self.entries.get(key, default)

    def items(self) -> list[tuple[tuple, float]]:
        return sorted(self.entries.items())

    def keys(self) -> list[tuple]:
        return sorted(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AggregateMap):
            return NotImplemented
        return self.group_by == other.group_by and self.entries == other.entries

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {v!r}" for k, v in self.items())
        return f"AggregateMap({self.group_by}, {{{body}}})"

    def copy(self) -> "AggregateMap":
        return AggregateMap(self.group_by, self.entries)


def tensor_product_update(target: AggregateMap, factors: Sequence[AggregateMap]) -> AggregateMap:
    """``target[k_0 ++ ... ++ k_n] += p_0 * ... * p_n`` over all entry combinations.

    Factor group-bys must be disjoint and cover the target's group-by; keys
    are reassembled into the target layout.
    """
    placement = []
    seen: set[str] = set()
    for f_idx, f in enumerate(factors):
        for k, v in enumerate(f.group_by):
            if v in seen:
                raise LayoutMismatch(f"variable {v!r} appears in two factors")
            seen.add(v)
            placement.append((v, f_idx, k))
    if seen != set(target.group_by) or len(target.group_by) != len(seen):
        raise LayoutMismatch(f"factor group-bys {sorted(seen)} do not cover "
                             f"target {target.group_by}")
    if any(not f for f in factors):
        return target
    where = {v: (f_idx, k) for v, f_idx, k in placement}
    layout = [where[v] for v in target.group_by]
    concatenated = [w for f in factors for w in f.group_by] == list(target.group_by)
    entries = target.entries
    for combo in itertools.product(*(f.entries.items() for f in factors)):
        if concatenated:
            key = tuple(itertools.chain.from_iterable(k for k, _ in combo))
        else:
            key = tuple(combo[f_idx][0][k] for f_idx, k in layout)
        payload = math.prod(p for _, p in combo)
        entries[key] = entries.get(key, 0.0) + payload
    return target


def local_values(register: NodeRegister, value, categorical: bool) -> list[AggregateMap]:
    """The lambda array: one map per local monomial for the current value."""
    out = []
    var = register.variable
    for mono, gb in zip(register.local, register.local_group_by):
        e = mono.exponent(var)
        if e == 0:
            out.append(AggregateMap((), {(): 1.0}))
        elif categorical:
            out.append(AggregateMap(gb, {(value,): 1.0}))
        else:
            out.append(AggregateMap((), {(): float(value) ** e}))
    return out


@dataclass
class AggregationStats:
    cache_hits: dict[str, int] = field(default_factory=dict)
    cache_misses: dict[str, int] = field(default_factory=dict)
    product_updates: int = 0
    guarded_skips: int = 0


class FactorizedAggregator:
    """Computes the root register aggregates over the join of ``relations``."""

    def __init__(self, vorder: VariableOrder, registers: Registers,
                 relations: Iterable[Relation], kinds: Mapping[str, str],
                 use_cache: bool = True):
        self.vorder = vorder
        self.registers = registers
        self.relations = {r.name: r for r in relations}
        self.kinds = kinds
        self.use_cache = use_cache
        self.stats = AggregationStats()
        self._cache: dict[str, dict[tuple, list[AggregateMap]]] = {}

    def run(self) -> list[AggregateMap]:
        self._cache = {}
        self.stats = AggregationStats()
        ranges = {name: r.full_range() for name, r in self.relations.items()}
        return self._visit(self.vorder.root, {}, ranges)

    def _visit(self, node: VONode, assignment: dict, ranges: dict[str, Range]
               ) -> list[AggregateMap]:
        var = node.variable
        reg = self.registers[var]
        caching = self.use_cache and node.cacheable
        if caching:
            context = tuple(assignment[v] for v in node.dep)
            slot = self._cache.setdefault(var, {})
            hit = slot.get(context)
            if hit is not None:
                self.stats.cache_hits[var] = self.stats.cache_hits.get(var, 0) + 1
                return hit
            self.stats.cache_misses[var] = self.stats.cache_misses.get(var, 0) + 1

        aggs = [AggregateMap(e.group_by) for e in reg.entries]
        rels = [name for name in node.relations if name in ranges]
        categorical = self.kinds.get(var) == CATEGORICAL
        if rels:
            values: Iterable = intersect_values([ranges[n] for n in rels], var)
        else:
            values = (_DUMMY,)
        child_regs = [self.registers[c.variable] for c in node.children]
        for a in values:
            lam = local_values(reg, a, categorical)
            if node.is_leaf:
                for l, entry in enumerate(reg.entries):
                    src = lam[entry.indices[0]]
                    tensor_product_update(aggs[l], [src])
                continue
            narrowed = dict(ranges)
            for n in rels:
                narrowed[n] = narrow_range(ranges[n], var, a)
            assignment[var] = a
            results = [self._visit(c, assignment, narrowed) for c in node.children]
            del assignment[var]
            if not all(res[creg.count_index] for res, creg in zip(results, child_regs)):
                self.stats.guarded_skips += 1
                continue
            for l, entry in enumerate(reg.entries):
                factors = [lam[entry.indices[0]]]
                factors += [results[j][i] for j, i in enumerate(entry.indices[1:])]
                tensor_product_update(aggs[l], factors)
                self.stats.product_updates += 1
        if caching:
            self._cache[var][context] = aggs
        return aggs


def compute_aggregates(vorder: VariableOrder, registers: Registers,
                       relations: Iterable[Relation], kinds: Mapping[str, str],
                       use_cache: bool = True) -> dict[Monomial, AggregateMap]:
    """Root aggregates keyed by monomial."""
    agg = FactorizedAggregator(vorder, registers, relations, kinds, use_cache)
    maps = agg.run()
    return {e.monomial: m for e, m in zip(registers.root.entries, maps)}
