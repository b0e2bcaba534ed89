"""Training linear regression, degree-2 polynomial regression and a
factorization machine over the same join.

A small synthetic sales database is generated, the three models are
trained from one set of aggregates each, and the linear model is checked
against a dense ridge solve over the materialised join.
"""
import json
import tempfile
from pathlib import Path

import numpy as np

from acdc import load_config, prepare, train
from acdc.oracle import active_domains, dense_gram, expand_vector, materialize_join, \
    ridge_closed_form
from acdc.pipeline import model_document

rng = np.random.default_rng(42)
workdir = Path(tempfile.mkdtemp(prefix="acdc-demo-"))

# Sales(store, item, units) joined with Items(item, price, color) and
# Stores(store, size).  Units depend on price, store size and color.
stores = {f"s{i}": rng.uniform(0.5, 2) for i in range(6)}
items = {f"i{j}": (rng.uniform(0.5, 2), rng.choice(["red", "blue", "green"])) for j in range(15)}
color_effect = {"red": 1.0, "blue": -0.5, "green": 0.0}
sales = []
for store, size in stores.items():
    for item, (price, color) in items.items():
        if rng.random() < 0.7:
            units = 3 - 1.2 * price + 0.8 * size + color_effect[color] + rng.normal(0, 0.2)
            sales.append(f"{store},{item},{units:.5f}")
(workdir / "sales.csv").write_text("store,item,units\n" + "\n".join(sales) + "\n")
(workdir / "items.csv").write_text(
    "item,price,color\n" + "\n".join(f"{k},{p:.3f},{c}" for k, (p, c) in items.items()) + "\n")
(workdir / "stores.csv").write_text(
    "store,size\n" + "\n".join(f"{k},{v:.3f}" for k, v in stores.items()) + "\n")

config = {
    "relations": [{"name": "Sales", "columns": ["store", "item", "units"], "file": "sales.csv"},
                  {"name": "Items", "columns": ["item", "price", "color"], "file": "items.csv"},
                  {"name": "Stores", "columns": ["store", "size"], "file": "stores.csv"}],
    "variables": [{"name": "store", "kind": "categorical", "role": "join-only"},
                  {"name": "item", "kind": "categorical", "role": "join-only"},
                  {"name": "size", "kind": "continuous"},
                  {"name": "price", "kind": "continuous"},
                  {"name": "color", "kind": "categorical"},
                  {"name": "units", "kind": "continuous", "role": "response"}],
    "vorder": ["store", ["size"], ["item", ["price", ["color", ["units"]]]]],
    "model": {"kind": "LR", "lambda": 1e-3},
}
(workdir / "sales.json").write_text(json.dumps(config))
base = load_config(workdir / "sales.json")

# ---------------------------------------------------------------------------
# The factorization machine is non-convex and runs on a fixed budget of 300
# iterations, so it usually reports converged=False.
for kind, extra in (("lr", {}), ("pr2", {"degree": 2}), ("fama", {"degree": 2, "rank": 4})):
    catalog = base.with_model(kind=kind, max_iters=300 if kind == "fama" else 10_000, **extra)
    prepared = prepare(catalog)
    trained = train(prepared)
    res = trained.result
    print(f"{kind:5s} components={len(prepared.components):3d} "
          f"aggregates={len(prepared.plan.monomials):3d} iterations={res.iterations:4d} "
          f"J={res.J:.6f} converged={res.converged}")
    if kind == "lr":
        lr = trained

# ---------------------------------------------------------------------------
# The linear model against the closed form over the listing representation.
prep = lr.prepared
join = materialize_join(prep.relations)
dense = dense_gram(join, prep.components, "units", active_domains(join, prep.catalog.kinds))
star = ridge_closed_form(dense, prep.catalog.model.lam)
gap = np.max(np.abs(expand_vector(lr.layout, lr.theta, dense.index) - star))
print(f"\njoin size {join.count}; largest difference to the ridge solve: {gap:.2e}")
print(json.dumps(model_document(lr)["blocks"], indent=2))
