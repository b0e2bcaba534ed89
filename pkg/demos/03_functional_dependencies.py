"""Ridge regression under a functional dependency city -> country.

Country is a function of city, so the country parameters can be folded
into the city parameters and the regulariser becomes
|gamma_other|^2 + <gamma_city, B^-1 gamma_city> with B = I + R'R.  Fewer
aggregates are needed and the trained model is the same.
"""
import numpy as np

from acdc.catalog import (CATEGORICAL, CONTINUOUS, FEATURE, RESPONSE, Catalog, FdSpec, ModelSpec,
                          OrderNode, RelationSchema, Variable)
from acdc.oracle import active_domains, dense_gram, expand_vector, materialize_join, predict
from acdc.pipeline import prepare, train
from acdc.storage import CategoryDictionary, make_relation

rng = np.random.default_rng(7)
country_of = {"saigon": "vietnam", "hanoi": "vietnam", "hue": "vietnam",
              "london": "england", "leeds": "england", "bristol": "england",
              "lyon": "france", "paris": "france", "nice": "france", "lille": "france"}
city_effect = {c: rng.normal(0, 0.5) for c in country_of}
country_effect = {"vietnam": -1.0, "england": 0.5, "france": 1.5}
sales = []
for _ in range(200):
    city = str(rng.choice(sorted(country_of)))
    price = round(float(rng.uniform(0.5, 3)), 3)
    units = 2 * price + city_effect[city] + country_effect[country_of[city]] + rng.normal(0, 0.1)
    sales.append((city, price, round(float(units), 5)))
geo = sorted(country_of.items())


def build(use_fd: bool):
    variables = (Variable("city", CATEGORICAL, FEATURE), Variable("country", CATEGORICAL, FEATURE),
                 Variable("price", CONTINUOUS, FEATURE), Variable("units", CONTINUOUS, RESPONSE))
    schemas = (RelationSchema("Sales", ("city", "price", "units")),
               RelationSchema("Geo", ("city", "country")))
    order = OrderNode("city", (OrderNode("price", (OrderNode("units"),)), OrderNode("country")))
    catalog = Catalog(variables, schemas, (FdSpec("city", ("country",)),), (order,),
                      ModelSpec(lam=1e-2, use_fd=use_fd))
    dictionary = CategoryDictionary()
    preorder = ["city", "price", "units", "country"]
    relations = [make_relation(schemas[0], sales, catalog.kinds, dictionary, preorder),
                 make_relation(schemas[1], geo, catalog.kinds, dictionary, preorder)]
    return prepare(catalog, relations, dictionary)


plain, reduced = build(False), build(True)
print(f"aggregates without the FD: {len(plain.plan.monomials)}, "
      f"with it: {len(reduced.plan.monomials)}")

# ---------------------------------------------------------------------------
# B for the city group: one extra unit for every pair of cities that share
# a country, on top of the identity.
(group,) = reduced.fd.groups
names = [reduced.dictionary.label("city", v) for v in group.domain]
print("\ncities:", names)
print(group.B.toarray().astype(int))
v = rng.normal(size=len(names))
print("residual of B (B^-1 v) - v:", np.max(np.abs(group.B @ group.solve(v) - v)))

# ---------------------------------------------------------------------------
# Train both ways and compare the fitted values tuple by tuple.
results = {}
for label, prep in (("plain", plain), ("fd", reduced)):
    trained = train(prep)
    join = materialize_join(prep.relations)
    dense = dense_gram(join, prep.full_components, "units",
                       active_domains(join, prep.catalog.kinds))
    g = expand_vector(trained.layout, trained.theta, dense.index)
    results[label] = predict(join, g, dense.index)
    print(f"\n{label}: {trained.result.iterations} iterations, J = {trained.result.J:.10f}")
    country = trained.layout.to_dict(trained.theta)["country"]
    print("  country parameters:",
          {reduced.dictionary.label("country", k[0]): round(x, 4) for k, x in country.items()})

gap = np.max(np.abs(results["plain"] - results["fd"]))
print(f"\nlargest difference between the two models' predictions: {gap:.2e}")
