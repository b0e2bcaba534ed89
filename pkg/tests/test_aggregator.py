import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acdc.aggregator import AggregateMap, FactorizedAggregator, compute_aggregates, \
    tensor_product_update
from acdc.catalog import CONTINUOUS
from acdc.errors import LayoutMismatch
from acdc.oracle import brute_force_aggregate, materialize_join
from acdc.planner import (Monomial, annotate_vorder, build_registers, enumerate_aggregates,
                          enumerate_components)

from instances import F1_ROWS, build_instance, f1_catalog, f1_instance, random_instance

ALL_CONTINUOUS = {v: CONTINUOUS for v in "ABCDE"}


def root_maps(inst, use_cache=True, response=True):
    cat = inst.catalog
    vo = annotate_vorder(cat.vorder, cat.relations)
    comps = enumerate_components(cat, vo)
    resp = cat.response.name if response and cat.response else None
    plan = enumerate_aggregates(comps, resp, cat.kinds, vo)
    regs = build_registers(vo, plan.monomials, cat.kinds)
    agg = FactorizedAggregator(vo, regs, inst.relations, cat.kinds, use_cache)
    maps = agg.run()
    return {e.monomial: m for e, m in zip(regs.root.entries, maps)}, agg, plan


def test_f1_mixed_kinds():
    inst = f1_instance()
    maps, _, _ = root_maps(inst)
    e7, e9 = inst.dictionary.lookup("E", "7"), inst.dictionary.lookup("E", "9")
    assert maps[Monomial.of()].entries == {(): 3.0}
    assert maps[Monomial.of("C")].entries == {(): 6.0}
    assert maps[Monomial.of("E")].entries == {(e7,): 2.0, (e9,): 1.0}
    assert maps[Monomial.parse("C*E")].entries == {(e7,): 5.0, (e9,): 1.0}
    assert maps[Monomial.parse("C*E")].group_by == ("E",)


def test_f1_all_continuous():
    cat = f1_catalog(kinds=ALL_CONTINUOUS)
    maps, _, _ = root_maps(build_instance(cat, F1_ROWS))
    assert maps[Monomial.parse("C*E")].entries == {(): 44.0}
    # SUM(C*E) grouped by A, read off the join directly
    join = materialize_join(build_instance(cat, F1_ROWS).relations)
    assert brute_force_aggregate(join, Monomial.parse("C*E"), ("A",)) == {(1.0,): 35.0,
                                                                        (2.0,): 9.0}


def test_f1_cache_hit_on_d():
    _, agg, _ = root_maps(f1_instance())
    assert agg.stats.cache_hits.get("D", 0) >= 1


def test_cache_transparency_f1():
    a, _, _ = root_maps(f1_instance(), use_cache=True)
    b, _, _ = root_maps(f1_instance(), use_cache=False)
    assert a == b


def test_empty_relation():
    rows = dict(F1_ROWS, S=[])
    maps, _, _ = root_maps(build_instance(f1_catalog(), rows))
    assert all(len(m) == 0 for m in maps.values())


def test_repeated_runs_do_not_leak():
    inst = f1_instance()
    cat = inst.catalog
    vo = annotate_vorder(cat.vorder, cat.relations)
    plan = enumerate_aggregates(enumerate_components(cat, vo), "C", cat.kinds, vo)
    regs = build_registers(vo, plan.monomials, cat.kinds)
    agg = FactorizedAggregator(vo, regs, inst.relations, cat.kinds)
    first = agg.run()
    second = agg.run()
    assert first == second


def test_tensor_product_examples():
    t = tensor_product_update(AggregateMap(), [AggregateMap((), {(): 2.0}),
                                               AggregateMap((), {(): 3.0})])
    assert t.entries == {(): 6.0}
    t = tensor_product_update(AggregateMap(("B", "E")),
                              [AggregateMap(("B",), {(1,): 1.0, (2,): 2.0}),
                               AggregateMap(("E",), {(7,): 5.0})])
    assert t.entries == {(1, 7): 5.0, (2, 7): 10.0}
    before = AggregateMap(("B",), {(1,): 4.0})
    t = tensor_product_update(before.copy(), [AggregateMap(("B",)), AggregateMap((), {(): 3.0})])
    assert t == before


def test_tensor_product_reorders_keys():
    t = tensor_product_update(AggregateMap(("B", "E")),
                              [AggregateMap(("E",), {(7,): 1.0}),
                               AggregateMap(("B",), {(1,): 2.0})])
    assert t.entries == {(1, 7): 2.0}


def test_tensor_product_layout_errors():
    with pytest.raises(LayoutMismatch):
        tensor_product_update(AggregateMap(("B",)), [AggregateMap(("B",)), AggregateMap(("B",))])
    with pytest.raises(LayoutMismatch):
        tensor_product_update(AggregateMap(("B", "E")), [AggregateMap(("B",))])


def test_compute_aggregates_wrapper():
    inst = f1_instance()
    cat = inst.catalog
    vo = annotate_vorder(cat.vorder, cat.relations)
    plan = enumerate_aggregates(enumerate_components(cat, vo), "C", cat.kinds, vo)
    regs = build_registers(vo, plan.monomials, cat.kinds)
    maps = compute_aggregates(vo, regs, inst.relations, cat.kinds)
    assert maps[Monomial.of()].entries == {(): 3.0}


def _close(a: float, b: float, exact: bool) -> bool:
    return a == b if exact else math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12)


def check_against_oracle(inst, exact):
    maps, _, plan = root_maps(inst)
    join = materialize_join(inst.relations)
    for mono in plan.monomials:
        got = maps[mono]
        expected = brute_force_aggregate(join, mono, got.group_by)
        assert set(got.entries) == set(expected), mono
        for key, value in expected.items():
            assert _close(got.entries[key], value, exact), (mono, key)
    count = maps[Monomial.of()].entries.get((), 0.0)
    assert count == join.count


@pytest.mark.parametrize("integer", [True, False])
def test_oracle_equivalence_random(integer):
    for seed in range(120):
        check_against_oracle(random_instance(seed, integer=integer), exact=integer)


def test_oracle_equivalence_pr2():
    from acdc.catalog import ModelSpec
    for seed in range(40):
        inst = random_instance(seed, model=ModelSpec(kind="pr2", degree=2))
        check_against_oracle(inst, exact=True)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_cache_transparency_random(seed):
    inst = random_instance(seed)
    a, _, _ = root_maps(inst, use_cache=True)
    b, _, _ = root_maps(inst, use_cache=False)
    assert a == b


def test_guard_skips_empty_children():
    rows = dict(F1_ROWS, T=[(1, 7)])
    maps, agg, _ = root_maps(build_instance(f1_catalog(), rows))
    assert maps[Monomial.of()].entries == {(): 2.0}
    assert agg.stats.product_updates > 0
