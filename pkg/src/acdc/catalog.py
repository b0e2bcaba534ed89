"""Run configuration: relations, variables, FDs, variable order and model.

The configuration is a single JSON document::

    {
      "relations": [{"name": "R", "columns": ["A", "B", "C"], "file": "R.csv"}],
      "variables": [{"name": "A", "kind": "continuous", "role": "feature"}, ...],
      "fds":       [{"determines": "city", "determined": ["country"]}],
      "vorder":    ["A", ["B", ["C"], ["D"]], ["E"]],
      "model":     {"kind": "LR", "lambda": 1e-3, ...}
    }

``vorder`` is a nested list whose first element names the node variable and
whose remaining elements are the child subtrees.  A list of such trees is
read as a forest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from .errors import (
    CompositeFd,
    ConfigSyntaxError,
    DuplicateName,
    FdOverlap,
    InvalidModel,
    InvalidRole,
    PathViolation,
    UnknownName,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, CATEGORICAL)

FEATURE = "feature"
RESPONSE = "response"
JOIN_ONLY = "join-only"
ROLES = (FEATURE, RESPONSE, JOIN_ONLY)

MODEL_KINDS = {"lr": 1, "pr2": 2, "fama": 2}

DEFAULT_LAMBDA = 1e-3
DEFAULT_TOLERANCE = 1e-9
DEFAULT_MAX_ITERS = {"lr": 10000, "pr2": 10000, "fama": 300}


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    role: str

    @property
    def categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class RelationSchema:
    name: str
    variables: tuple[str, ...]
    source: str | None = None


@dataclass(frozen=True)
class FdSpec:
    determinant: str
    determined: tuple[str, ...]


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "lr"
    degree: int = 1
    rank: int | None = None
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    max_iters: int = DEFAULT_MAX_ITERS["lr"]
    tolerance: float = DEFAULT_TOLERANCE
    use_fd: bool = False

    @property
    def linear(self) -> bool:
        """True when g(theta) is the identity (LR and PR2)."""
        return self.kind != "fama"


@dataclass(frozen=True)
class OrderNode:
    """One node of the declared variable order (before annotation)."""

    variable: str
    children: tuple["OrderNode", ...] = ()

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True)
class Catalog:
    variables: tuple[Variable, ...]
    relations: tuple[RelationSchema, ...]
    fds: tuple[FdSpec, ...]
    vorder: tuple[OrderNode, ...]
    model: ModelSpec
    base_dir: str | None = field(default=None, compare=False)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise UnknownName(f"undeclared variable {name!r}")

    @property
    def kinds(self) -> dict[str, str]:
        return {v.name: v.kind for v in self.variables}

    @property
    def features(self) -> list[Variable]:
        return [v for v in self.variables if v.role == FEATURE]

    @property
    def response(self) -> Variable:
        (y,) = [v for v in self.variables if v.role == RESPONSE]
        return y

    def with_model(self, **changes) -> "Catalog":
        return replace(self, model=replace(self.model, **changes))


# -- parsing ---------------------------------------------------------------

def _require(obj: dict, key: str, where: str) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise ConfigSyntaxError(f"{where}: missing field {key!r}")
    return obj[key]


def _parse_order(node: Any) -> OrderNode:
    if isinstance(node, str):
        return OrderNode(node)
    if not isinstance(node, list) or not node or not isinstance(node[0], str):
        raise ConfigSyntaxError(f"vorder: malformed subtree {node!r}")
    return OrderNode(node[0], tuple(_parse_order(child) for child in node[1:]))


def _parse_forest(raw: Any) -> tuple[OrderNode, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigSyntaxError("vorder must be a non-empty nested list")
    if isinstance(raw[0], str):
        return (_parse_order(raw),)
    return tuple(_parse_order(tree) for tree in raw)


def parse_model(raw: dict) -> ModelSpec:
    if not isinstance(raw, dict):
        raise ConfigSyntaxError("model must be an object")
    kind = str(_require(raw, "kind", "model")).lower()
    if kind not in MODEL_KINDS:
        raise InvalidModel(f"unknown model kind {raw['kind']!r}")
    try:
        rank = raw.get("rank")
        spec = ModelSpec(
            kind=kind,
            degree=int(raw.get("degree", MODEL_KINDS[kind])),
            rank=None if rank is None else int(rank),
            lam=float(raw.get("lambda", DEFAULT_LAMBDA)),
            seed=int(raw.get("seed", 0)),
            max_iters=int(raw.get("maxIters", DEFAULT_MAX_ITERS[kind])),
            tolerance=float(raw.get("tolerance", DEFAULT_TOLERANCE)),
            use_fd=bool(raw.get("useFd", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigSyntaxError(f"model: {exc}") from None
    if kind == "fama" and spec.rank is None:
        spec = replace(spec, rank=8)
    return spec


def parse_config(text: str, base_dir: str | None = None) -> Catalog:
    """Parse a configuration document into a :class:`Catalog`.

    Names are resolved eagerly: every relation column, FD variable and
    variable-order node must refer to a declared variable.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigSyntaxError("configuration must be a JSON object")

    variables = []
    seen: set[str] = set()
    for raw in _require(doc, "variables", "config"):
        name = _require(raw, "name", "variable")
        if name in seen:
            raise DuplicateName(f"variable {name!r} declared twice")
        seen.add(name)
        kind = _require(raw, "kind", f"variable {name}")
        role = raw.get("role", FEATURE)
        if kind not in KINDS:
            raise ConfigSyntaxError(f"variable {name}: unknown kind {kind!r}")
        if role not in ROLES:
            raise ConfigSyntaxError(f"variable {name}: unknown role {role!r}")
        variables.append(Variable(name, kind, role))

    relations = []
    rel_names: set[str] = set()
    for raw in _require(doc, "relations", "config"):
        name = _require(raw, "name", "relation")
        if name in rel_names:
            raise DuplicateName(f"relation {name!r} declared twice")
        rel_names.add(name)
        cols = tuple(_require(raw, "columns", f"relation {name}"))
        for col in cols:
            if col not in seen:
                raise UnknownName(f"relation {name}: undeclared variable {col!r}")
        if len(set(cols)) != len(cols):
            raise DuplicateName(f"relation {name}: repeated column")
        relations.append(RelationSchema(name, cols, raw.get("file")))

    fds = []
    for raw in doc.get("fds", []) or []:
        det = _require(raw, "determines", "fd")
        if isinstance(det, list):
            if len(det) != 1:
                raise CompositeFd(f"composite determinant {det!r} is not supported")
            det = det[0]
        determined = _require(raw, "determined", "fd")
        if isinstance(determined, str):
            determined = [determined]
        for name in [det, *determined]:
            if name not in seen:
                raise UnknownName(f"fd: undeclared variable {name!r}")
        fds.append(FdSpec(det, tuple(determined)))

    vorder = _parse_forest(_require(doc, "vorder", "config"))
    placed: set[str] = set()
    for tree in vorder:
        for node in tree.walk():
            if node.variable not in seen:
                raise UnknownName(f"vorder: undeclared variable {node.variable!r}")
            if node.variable in placed:
                raise DuplicateName(f"vorder: variable {node.variable!r} placed twice")
            placed.add(node.variable)

    model = parse_model(_require(doc, "model", "config"))
    return Catalog(tuple(variables), tuple(relations), tuple(fds), vorder, model, base_dir)


def load_config(path: str | Path) -> Catalog:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=str(path.parent))


# -- serialisation ---------------------------------------------------------

def _order_to_list(node: OrderNode) -> list:
    return [node.variable, *(_order_to_list(c) for c in node.children)]


def catalog_to_dict(catalog: Catalog) -> dict:
    m = catalog.model
    model: dict[str, Any] = {
        "kind": {"lr": "LR", "pr2": "PR2", "fama": "FaMa"}[m.kind],
        "degree": m.degree,
        "lambda": m.lam,
        "seed": m.seed,
        "maxIters": m.max_iters,
        "tolerance": m.tolerance,
        "useFd": m.use_fd,
    }
    if m.rank is not None:
        model["rank"] = m.rank
    if len(catalog.vorder) == 1:
        vorder = _order_to_list(catalog.vorder[0])
    else:
        vorder = [_order_to_list(t) for t in catalog.vorder]
    relations = []
    for r in catalog.relations:
        entry: dict[str, Any] = {"name": r.name, "columns": list(r.variables)}
        if r.source is not None:
            entry["file"] = r.source
        relations.append(entry)
    return {
        "relations": relations,
        "variables": [{"name": v.name, "kind": v.kind, "role": v.role}
                      for v in catalog.variables],
        "fds": [{"determines": f.determinant, "determined": list(f.determined)}
                for f in catalog.fds],
        "vorder": vorder,
        "model": model,
    }


def serialize_config(catalog: Catalog) -> str:
    return json.dumps(catalog_to_dict(catalog), indent=2)


# -- validation ------------------------------------------------------------

def _ancestors(vorder: Iterable[OrderNode]) -> dict[str, list[str]]:
    anc: dict[str, list[str]] = {}

    def visit(node: OrderNode, path: list[str]):
        anc[node.variable] = list(path)
        for child in node.children:
            visit(child, path + [node.variable])

    for tree in vorder:
        visit(tree, [])
    return anc


def check_paths(vorder: Iterable[OrderNode], relations: Iterable[RelationSchema]) -> None:
    """Raise PathViolation unless each relation lies on one root-to-leaf path."""
    anc = _ancestors(vorder)
    for rel in relations:
        missing = [v for v in rel.variables if v not in anc]
        if missing:
            raise PathViolation(f"relation {rel.name}: {missing} not in the variable order")
        deepest = max(rel.variables, key=lambda v: len(anc[v]))
        path = set(anc[deepest]) | {deepest}
        off = [v for v in rel.variables if v not in path]
        if off:
            raise PathViolation(
                f"relation {rel.name}: {off} not on the root-to-leaf path of {deepest!r}")


def validate_catalog(catalog: Catalog) -> Catalog:
    """Check every catalog invariant; returns the catalog unchanged."""
    responses = [v for v in catalog.variables if v.role == RESPONSE]
    if len(responses) != 1:
        raise InvalidRole(f"expected exactly one response variable, found {len(responses)}")
    if responses[0].kind != CONTINUOUS:
        raise InvalidRole(f"response {responses[0].name!r} must be continuous")

    in_relation = {v for r in catalog.relations for v in r.variables}
    for v in catalog.variables:
        if v.name not in in_relation:
            raise InvalidRole(f"variable {v.name!r} appears in no relation")

    placed = {n.variable for t in catalog.vorder for n in t.walk()}
    unplaced = [v.name for v in catalog.variables if v.name not in placed]
    if unplaced:
        raise PathViolation(f"variables {unplaced} missing from the variable order")
    check_paths(catalog.vorder, catalog.relations)

    kinds = catalog.kinds
    grouped: dict[str, int] = {}
    for i, fd in enumerate(catalog.fds):
        if not fd.determined:
            raise ConfigSyntaxError("fd: empty determined set")
        if fd.determinant in fd.determined:
            raise InvalidRole(f"fd: {fd.determinant!r} determines itself")
        for name in (fd.determinant, *fd.determined):
            if kinds[name] != CATEGORICAL:
                raise InvalidRole(f"fd variable {name!r} must be categorical")
            if name in grouped and grouped[name] != i:
                raise FdOverlap(f"variable {name!r} belongs to two FD groups")
            grouped[name] = i

    m = catalog.model
    if m.kind not in MODEL_KINDS:
        raise InvalidModel(f"unknown model kind {m.kind!r}")
    if m.degree != MODEL_KINDS[m.kind]:
        raise InvalidModel(f"model {m.kind} requires degree {MODEL_KINDS[m.kind]}")
    if m.lam < 0:
        raise InvalidModel("lambda must be non-negative")
    if m.kind == "fama" and (m.rank is None or m.rank < 1):
        raise InvalidModel("factorization machines need rank >= 1")
    if m.max_iters < 0 or m.tolerance <= 0:
        raise InvalidModel("maxIters must be >= 0 and tolerance > 0")
    if m.use_fd:
        if m.kind != "lr":
            raise InvalidModel("FD reparameterization is only available for LR")
        if not catalog.fds:
            raise InvalidModel("useFd requires at least one functional dependency")
        for fd in catalog.fds:
            if catalog.variable(fd.determinant).role != FEATURE:
                raise InvalidRole(f"fd determinant {fd.determinant!r} must be a feature")
    return catalog
