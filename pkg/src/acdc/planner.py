"""Compile-time planning: annotated variable order, model components,
the distinct aggregate monomials, and the per-node aggregate registers.

Nothing here touches data.  The registers are an index structure: every
entry of ``R_X`` names one component in ``Lambda_X`` and one entry in the
register of each child of ``X``; the aggregate is the tensor product of
those components summed over the values of ``X``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .catalog import CATEGORICAL, Catalog, OrderNode, RelationSchema, check_paths
from .errors import UnhousedVariable

SYNTHETIC_ROOT = "__root__"


# -- variable order --------------------------------------------------------

@dataclass(eq=False)
class VONode:
    variable: str
    children: list["VONode"] = field(default_factory=list)
    parent: "VONode | None" = None
    anc: tuple[str, ...] = ()
    dep: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()
    subtree: frozenset = frozenset()
    preorder: int = 0
    synthetic: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def cacheable(self) -> bool:
        return set(self.dep) != set(self.anc)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


class VariableOrder:
    """A rooted tree over the query variables annotated with anc/dep sets."""

    def __init__(self, root: VONode):
        self.root = root
        self.nodes: dict[str, VONode] = {}
        for i, node in enumerate(root.walk()):
            node.preorder = i
            self.nodes[node.variable] = node

    @property
    def preorder(self) -> list[str]:
        return [n.variable for n in self.root.walk()]

    def position(self, variable: str) -> int:
        return self.nodes[variable].preorder

    def __getitem__(self, variable: str) -> VONode:
        return self.nodes[variable]

    def __contains__(self, variable: str) -> bool:
        return variable in self.nodes

    def to_list(self, node: VONode | None = None) -> list:
        node = node or self.root
        return [node.variable, *(self.to_list(c) for c in node.children)]


def annotate_vorder(trees: Sequence[OrderNode] | OrderNode,
                    schemas: Iterable[RelationSchema]) -> VariableOrder:
    """Build the annotated order; a forest is hung under a synthetic root."""
    if isinstance(trees, OrderNode):
        trees = (trees,)
    schemas = list(schemas)
    check_paths(trees, schemas)

    def build(spec: OrderNode, parent: VONode | None) -> VONode:
        node = VONode(spec.variable, parent=parent)
        node.children = [build(c, node) for c in spec.children]
        return node

    if len(trees) == 1:
        root = build(trees[0], None)
    else:
        root = VONode(SYNTHETIC_ROOT, synthetic=True)
        root.children = [build(t, root) for t in trees]

    def fill(node: VONode, anc: tuple[str, ...]) -> frozenset:
        node.anc = anc
        sub = {node.variable}
        for child in node.children:
            sub |= fill(child, anc + (node.variable,))
        node.subtree = frozenset(sub)
        node.relations = tuple(s.name for s in schemas if node.variable in s.variables)
        touching = [set(s.variables) for s in schemas if sub & set(s.variables)]
        node.dep = tuple(a for a in anc if any(a in vs for vs in touching))
        return node.subtree

    fill(root, ())
    return VariableOrder(root)


# -- monomials -------------------------------------------------------------

class Monomial:
    """A product of variable powers, ``powers`` sorted by variable name.

    Immutable value type; the hash and sort key are computed once since
    planning hashes and sorts monomials constantly.
    """

    __slots__ = ("powers", "_hash", "_key")

    def __init__(self, powers: tuple[tuple[str, int], ...] = ()):
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "_hash", hash(powers))
        object.__setattr__(self, "_key", None)

    def __setattr__(self, name, value):
        raise AttributeError("Monomial is immutable")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if not isinstance(other, Monomial):
            return NotImplemented
        return self._hash == other._hash and self.powers == other.powers

    def __reduce__(self):
        return (Monomial, (self.powers,))

    @classmethod
    def of(cls, *names: str) -> "Monomial":
        counts: dict[str, int] = {}
        for n in names:
            counts[n] = counts.get(n, 0) + 1
        return cls(tuple(sorted(counts.items())))

    @classmethod
    def parse(cls, text: str) -> "Monomial":
        """Inverse of ``str``: ``"1"`` or names joined by ``*``."""
        text = text.strip()
        return cls() if text == "1" else cls.of(*text.split("*"))

    def __mul__(self, other: "Monomial") -> "Monomial":
        if not other.powers:
            return self
        if not self.powers:
            return other
        counts = dict(self.powers)
        for v, e in other.powers:
            counts[v] = counts.get(v, 0) + e
        return Monomial(tuple(sorted(counts.items())))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple([p[0] for p in self.powers])

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.powers)

    def exponent(self, variable: str) -> int:
        for v, e in self.powers:
            if v == variable:
                return e
        return 0

    def project(self, variables) -> "Monomial":
        kept = tuple(p for p in self.powers if p[0] in variables)
        return self if len(kept) == len(self.powers) else Monomial(kept)

    def canonical(self, categorical) -> "Monomial":
        """Cap categorical exponents at 1 (indicators are idempotent)."""
        if all(e == 1 or v not in categorical for v, e in self.powers):
            return self
        return Monomial(tuple((v, 1 if v in categorical else e) for v, e in self.powers))

    def without(self, variable: str) -> "Monomial":
        return Monomial(tuple((v, e) for v, e in self.powers if v != variable))

    @property
    def sort_key(self):
        key = self._key
        if key is None:
            key = (self.degree, tuple(v for v, e in self.powers for _ in range(e)))
            object.__setattr__(self, "_key", key)
        return key

    def __str__(self) -> str:
        if not self.powers:
            return "1"
        return "*".join(v for v, e in self.powers for _ in range(e))

    def __repr__(self) -> str:
        return f"Monomial({str(self)!r})"


ONE = Monomial()


def group_by_of(monomial: Monomial, kinds: Mapping[str, str], position: Mapping[str, int]
                ) -> tuple[str, ...]:
    """Categorical variables of a monomial in variable-order preorder."""
    cats = [v for v in monomial.variables if kinds.get(v) == CATEGORICAL]
    return tuple(sorted(cats, key=lambda v: position[v]))


# -- model components ------------------------------------------------------

@dataclass(frozen=True)
class Component:
    """One component function h_i of the feature map."""

    name: str
    variables: tuple[str, ...]
    monomial: Monomial
    categorical: tuple[str, ...]

    @property
    def is_intercept(self) -> bool:
        return not self.variables

    @property
    def is_interaction(self) -> bool:
        return len(self.variables) == 2 and self.variables[0] != self.variables[1]


def make_component(variables: Sequence[str], kinds: Mapping[str, str],
                   position: Mapping[str, int]) -> Component:
    variables = tuple(variables)
    name = "*".join(variables) if variables else "1"
    mono = Monomial.of(*variables).canonical(
        {v for v in variables if kinds[v] == CATEGORICAL})
    return Component(name, variables, mono, group_by_of(mono, kinds, position))


def enumerate_components(catalog: Catalog, vorder: VariableOrder | None = None,
                         kind: str | None = None) -> list[Component]:
    """Intercept, features in catalog order, then feature pairs.

    Pairs follow catalog order lexicographically.  PR2 keeps squares of
    continuous features; categorical self-pairs are never generated and the
    factorization machine drops all squares.
    """
    if vorder is None:
        vorder = annotate_vorder(catalog.vorder, catalog.relations)
    kind = kind or catalog.model.kind
    kinds = catalog.kinds
    pos = {v: vorder.position(v) for v in vorder.preorder}
    feats = [v.name for v in catalog.features]
    comps = [make_component((), kinds, pos)]
    comps += [make_component((f,), kinds, pos) for f in feats]
    if kind in ("pr2", "fama"):
        for i, a in enumerate(feats):
            for b in feats[i:]:
                if a == b and (kind == "fama" or kinds[a] == CATEGORICAL):
                    continue
                comps.append(make_component((a, b), kinds, pos))
    return comps


# -- aggregates ------------------------------------------------------------

@dataclass
class AggregatePlan:
    """Distinct aggregates and the Sigma / c cells each one serves."""

    components: list[Component]
    response: str | None
    monomials: list[Monomial]
    group_by: dict[Monomial, tuple[str, ...]]
    sigma_cells: dict[Monomial, list[tuple[int, int]]]
    c_cells: dict[Monomial, list[int]]
    response_square: Monomial | None

    @property
    def count_monomial(self) -> Monomial:
        return ONE

    def __len__(self) -> int:
        return len(self.monomials)


def enumerate_aggregates(components: Sequence[Component], response: str | None,
                         kinds: Mapping[str, str], vorder: VariableOrder) -> AggregatePlan:
    cats = {v for v, k in kinds.items() if k == CATEGORICAL}
    pos = {v: vorder.position(v) for v in vorder.preorder}
    sigma: dict[Monomial, list[tuple[int, int]]] = {}
    cvec: dict[Monomial, list[int]] = {}
    for i, hi in enumerate(components):
        for j in range(i, len(components)):
            m = (hi.monomial * components[j].monomial).canonical(cats)
            sigma.setdefault(m, []).append((i, j))
    ysq = None
    if response is not None:
        y = Monomial.of(response)
        for i, hi in enumerate(components):
            cvec.setdefault((y * hi.monomial).canonical(cats), []).append(i)
        ysq = Monomial.of(response, response)
    distinct = set(sigma) | set(cvec) | {ONE}
    if ysq is not None:
        distinct.add(ysq)
    monomials = sorted(distinct, key=lambda m: m.sort_key)
    return AggregatePlan(
        components=list(components),
        response=response,
        monomials=monomials,
        group_by={m: group_by_of(m, kinds, pos) for m in monomials},
        sigma_cells={m: sigma.get(m, []) for m in monomials},
        c_cells={m: cvec.get(m, []) for m in monomials},
        response_square=ysq,
    )


# -- registers -------------------------------------------------------------

@dataclass(frozen=True)
class RegisterEntry:
    monomial: Monomial
    group_by: tuple[str, ...]
    indices: tuple[int, ...]    # [i_0 into Lambda_X, i_1..i_k into child registers]


@dataclass
class NodeRegister:
    variable: str
    entries: list[RegisterEntry]
    local: list[Monomial]
    local_group_by: list[tuple[str, ...]]
    index: dict[Monomial, int]

    @property
    def count_index(self) -> int:
        return self.index[ONE]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def monomials(self) -> list[Monomial]:
        return [e.monomial for e in self.entries]


class Registers:
    def __init__(self, vorder: VariableOrder, by_var: dict[str, NodeRegister]):
        self.vorder = vorder
        self.by_var = by_var

    def __getitem__(self, variable: str) -> NodeRegister:
        return self.by_var[variable]

    @property
    def root(self) -> NodeRegister:
        return self.by_var[self.vorder.root.variable]

    def sizes(self) -> dict[str, tuple[int, int]]:
        """``variable -> (|R_X|, |Lambda_X|)`` in preorder."""
        return {v: (len(self.by_var[v].entries), len(self.by_var[v].local))
                for v in self.vorder.preorder}


def build_registers(vorder: VariableOrder, monomials: Iterable[Monomial],
                    kinds: Mapping[str, str]) -> Registers:
    """Decompose every monomial along the variable order into registers.

    Each register always carries the count monomial ``1``; its entry is the
    emptiness witness the aggregator checks before a product update.
    """
    monomials = set(monomials)
    for m in monomials:
        for v in m.variables:
            if v not in vorder:
                raise UnhousedVariable(f"monomial {m} uses {v!r}, absent from the order")
    pos = {v: vorder.position(v) for v in vorder.preorder}
    order = lambda ms: sorted(ms, key=lambda m: m.sort_key)  # noqa: E731
    by_var: dict[str, NodeRegister] = {}
    gb_memo: dict[Monomial, tuple[str, ...]] = {}

    def gb(m: Monomial) -> tuple[str, ...]:
        out = gb_memo.get(m)
        if out is None:
            out = gb_memo[m] = group_by_of(m, kinds, pos)
        return out

    def build(node: VONode, demanded: set[Monomial]) -> NodeRegister:
        entries = order(demanded | {ONE})
        own = (node.variable,)
        local_of = [m.project(own) for m in entries]
        local = order(set(local_of) | {ONE})
        local_index = {m: i for i, m in enumerate(local)}
        child_regs = []
        child_of = []
        for child in node.children:
            projected = [m.project(child.subtree) for m in entries]
            child_of.append(projected)
            child_regs.append(build(child, set(projected)))
        reg_entries = []
        for n, m in enumerate(entries):
            idx = [local_index[local_of[n]]]
            for creg, projected in zip(child_regs, child_of):
                idx.append(creg.index[projected[n]])
            reg_entries.append(RegisterEntry(m, gb(m), tuple(idx)))
        reg = NodeRegister(
            variable=node.variable,
            entries=reg_entries,
            local=local,
            local_group_by=[gb(m) for m in local],
            index={m: i for i, m in enumerate(entries)},
        )
        by_var[node.variable] = reg
        return reg

    build(vorder.root, monomials)
    return Registers(vorder, by_var)


def describe_plan(registers: Registers, plan: AggregatePlan | None = None) -> str:
    """Text dump: register sizes per node, then one monomial per line."""
    lines = []
    for v, (r, lam) in registers.sizes().items():
        lines.append(f"{v}\t|R|={r}\t|Lambda|={lam}")
    lines.append("")
    monos = plan.monomials if plan is not None else registers.root.monomials
    lines.extend(str(m) for m in monos)
    return "\n".join(lines)
