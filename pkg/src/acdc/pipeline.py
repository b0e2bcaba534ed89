"""End-to-end training driver shared by the command line and the demos."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .aggregator import AggregationStats, FactorizedAggregator
from .catalog import Catalog, validate_catalog
from .fd import (FdContext, bind_layout, build_B, extract_fd_maps, reduce_components,
                 theta_from_gamma)
from .gram import ComponentLayout, GramSystem, assemble
from .planner import (AggregatePlan, Component, Registers, VariableOrder, annotate_vorder,
                      build_registers, enumerate_aggregates, enumerate_components)
from .solver import Objective, TrainResult, bgd_train
from .storage import CategoryDictionary, Relation, load_relation


@dataclass
class Prepared:
    """Everything up to and including the Gram system."""

    catalog: Catalog
    vorder: VariableOrder
    relations: list[Relation]
    dictionary: CategoryDictionary
    components: list[Component]
    plan: AggregatePlan
    registers: Registers
    system: GramSystem
    root: dict
    stats: AggregationStats
    fd: FdContext | None = None
    full_components: list[Component] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class Trained:
    prepared: Prepared
    result: TrainResult
    layout: ComponentLayout
    theta: np.ndarray


def load_relations(catalog: Catalog, vorder: VariableOrder, delimiter: str = ",",
                   dictionary: CategoryDictionary | None = None) -> tuple[list[Relation],
                                                                         CategoryDictionary]:
    dictionary = dictionary or CategoryDictionary()
    base = Path(catalog.base_dir or ".")
    order = vorder.preorder
    relations = []
    for schema in catalog.relations:
        if schema.source is None:
            raise FileNotFoundError(f"relation {schema.name} has no file")
        path = Path(schema.source)
        if not path.is_absolute():
            path = base / path
        relations.append(load_relation(path, schema, dictionary, catalog.kinds, order, delimiter))
    return relations, dictionary


def prepare(catalog: Catalog, relations: Sequence[Relation] | None = None,
            dictionary: CategoryDictionary | None = None, delimiter: str = ",",
            use_cache: bool = True) -> Prepared:
    """Validate, load, plan and aggregate; FD reduction applies when the
    model asks for it."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    validate_catalog(catalog)
    vorder = annotate_vorder(catalog.vorder, catalog.relations)
    if relations is None:
        relations, dictionary = load_relations(catalog, vorder, delimiter, dictionary)
    relations = list(relations)
    dictionary = dictionary or CategoryDictionary()
    t1 = time.perf_counter()
    timings["load"] = (t1 - t0) * 1e3

    full = enumerate_components(catalog, vorder)
    fd = None
    components = full
    if catalog.model.use_fd:
        fd = extract_fd_maps(relations, catalog.fds, [v.name for v in catalog.features])
        components = reduce_components(full, fd)
    kinds = catalog.kinds
    plan = enumerate_aggregates(components, catalog.response.name, kinds, vorder)
    registers = build_registers(vorder, plan.monomials, kinds)
    t2 = time.perf_counter()
    timings["plan"] = (t2 - t1) * 1e3

    agg = FactorizedAggregator(vorder, registers, relations, kinds, use_cache)
    maps = agg.run()
    root = {e.monomial: m for e, m in zip(registers.root.entries, maps)}
    system = assemble(root, plan)
    if fd is not None:
        bind_layout(fd, system.layout)
        build_B(fd)
    timings["aggregate"] = (time.perf_counter() - t2) * 1e3
    return Prepared(catalog, vorder, relations, dictionary, components, plan, registers,
                    system, root, agg.stats, fd, full, timings)


def train(prepared: Prepared) -> Trained:
    t0 = time.perf_counter()
    objective = Objective(prepared.system, prepared.catalog.model, fd=prepared.fd)
    result = bgd_train(objective)
    if prepared.fd is not None:
        layout, theta = theta_from_gamma(prepared.fd, result.theta, prepared.full_components)
    else:
        layout, theta = prepared.system.layout, result.theta
    prepared.timings["train"] = (time.perf_counter() - t0) * 1e3
    return Trained(prepared, result, layout, theta)


# -- reporting -------------------------------------------------------------

def _label_key(prepared: Prepared, variables: Sequence[str], key: tuple) -> str:
    return ",".join(f"{v}={prepared.dictionary.label(v, k)}" for v, k in zip(variables, key))


def model_document(trained: Trained) -> dict[str, Any]:
    """Parameter blocks keyed by component name and category labels."""
    prep = trained.prepared
    spec = prep.catalog.model
    layout = trained.layout
    blocks: dict[str, Any] = {}
    if spec.kind == "fama":
        params = Objective(prep.system, spec).params
        theta = trained.result.theta
        for i in params.degree1:
            comp = layout.components[i]
            blocks[comp.name] = _block(prep, comp, layout.keys[i], layout.block(theta, i))
        factors: dict[str, Any] = {}
        for v in params.features:
            mat = params.factor(theta, v)
            keys = prep.system.variable_domains[v]
            cats = (v,) if keys and keys[0] != () else ()
            if cats:
                factors[v] = {_label_key(prep, cats, k): row.tolist() for k, row in zip(keys, mat)}
            else:
                factors[v] = mat[0].tolist()
        doc_factors = {"rank": spec.rank, "factors": factors}
    else:
        for i, comp in enumerate(layout.components):
            blocks[comp.name] = _block(prep, comp, layout.keys[i], layout.block(trained.theta, i))
        doc_factors = None
    doc: dict[str, Any] = {"model": spec.kind, "lambda": spec.lam, "blocks": blocks}
    if doc_factors is not None:
        doc["interactions"] = doc_factors
    return doc


def _block(prep: Prepared, comp: Component, keys, values: np.ndarray):
    if not comp.categorical:
        return float(values[0])
    return {_label_key(prep, comp.categorical, k): float(v) for k, v in zip(keys, values)}


def report_document(trained: Trained, timings: bool = False) -> dict[str, Any]:
    prep = trained.prepared
    res = trained.result
    doc: dict[str, Any] = {
        "model": prep.catalog.model.kind,
        "iterations": res.iterations,
        "finalJ": res.J,
        "converged": res.converged,
        "joinSize": int(prep.system.count),
        "aggregates": {
            "distinctMonomials": len(prep.plan.monomials),
            "totalEntries": sum(len(m) for m in prep.root.values()),
        },
        "parameters": int(trained.theta.size),
        "fd": prep.fd is not None,
    }
    if timings:
        doc["timingsMs"] = {k: round(v, 3) for k, v in prep.timings.items()}
    return doc
