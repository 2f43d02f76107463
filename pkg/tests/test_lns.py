import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import chain_instance, make_instance, simple_network
from minelns.errors import (ConfigError, EmptyHistory, EmptyWeightVector, MissingValueElement,
                            MissingValues, StrategyInapplicable, UnknownBlock, UnknownPit)
from minelns.feasibility import npv, validate, zero_solution
from minelns.generator import GenConfig, generate_instance, generate_with_reference
from minelns.instance import predecessors, successors
from minelns.lns import (
    Fixing, Focal, IncumbentStore, LnsConfig, Neighbourhood, Strategy, Termination, base_weights,
    blending_contribution, fix_set_for, form_neighbourhood, form_path, improvement_rate,
    restricted_cone_above, restricted_cone_below, rins_fixes, run_lns, should_terminate,
    trigger_blocks,
)
from minelns.lns.neighbourhood import _Formation
from minelns.model import build_model, extract_solution
from minelns.solution import INTEGER_KINDS, VarKey
from minelns.solver import SolveParams, SolveResult, Status, solve

ONE = [(1.0, 0.0, {"Fe": 0.5})]


def _sol(inst, params=SolveParams(mip_gap=1e-6)):
    m = build_model(inst)
    return extract_solution(m, solve(m, params).vector)


# ---------------------------------------------------------------- weights


def test_md_weights_chain_and_isolated():
    inst = make_instance([(k, 0, ONE) for k in "abcd"], [("a", "b"), ("b", "c")])
    w = base_weights(inst, Focal.MD)
    assert w == {"a": 0.5, "b": 0.5, "c": 0.5, "d": 0.0}


def test_obj_weights():
    inst = make_instance([("b", 0, [(100.0, 1.0, {"Fe": 0.6})])])
    assert base_weights(inst, Focal.OBJ) == {"b": pytest.approx(60.0)}
    assert base_weights(inst, Focal.OBJ, "Fe") == {"b": pytest.approx(60.0)}
    with pytest.raises(MissingValueElement):
        base_weights(inst, Focal.OBJ, "Cu")


def test_rand_weights():
    inst = chain_instance()
    assert set(base_weights(inst, Focal.RAND).values()) == {1.0}


@st.composite
def layered(draw):
    n = draw(st.integers(2, 30))
    bench = [draw(st.integers(0, 3)) for _ in range(n)]
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
    edges = sorted({(max(i, j), min(i, j)) for i, j in pairs if i != j})
    return n, bench, edges


def _reach(n, edges):
    r = {i: set() for i in range(n)}
    for _ in range(n):
        for i, j in edges:
            r[i] |= {j} | r[j]
    return r


@settings(max_examples=30, deadline=None)
@given(layered())
def test_md_and_cones_match_brute_force(g):
    n, bench, edges = g
    inst = make_instance([(f"n{i}", bench[i], ONE) for i in range(n)], [(f"n{i}", f"n{j}") for i, j in edges])
    pred = _reach(n, edges)
    w = base_weights(inst, Focal.MD)
    for i in range(n):
        succ = {k for k in range(n) if i in pred[k]}
        size = len(pred[i]) + len(succ)
        assert w[f"n{i}"] == (1.0 / size if size else 0.0)
        assert restricted_cone_above(inst, f"n{i}") == {f"n{j}" for j in pred[i] if bench[j] == bench[i]}
        assert restricted_cone_below(inst, f"n{i}") == {f"n{k}" for k in succ if bench[k] == bench[i]}


def test_cones():
    inst = make_instance([("a", 2, ONE), ("b", 2, ONE), ("c", 2, ONE), ("d", 1, ONE), ("e", 3, ONE)],
                         [("a", "b"), ("b", "c"), ("d", "a"), ("c", "e")])
    assert restricted_cone_above(inst, "a") == {"b", "c"}
    assert restricted_cone_above(inst, "d") == frozenset()
    assert restricted_cone_below(inst, "c") == {"a", "b"}
    with pytest.raises(UnknownBlock):
        restricted_cone_above(inst, "zz")


# ---------------------------------------------------------------- paths


def test_path_isolated():
    inst = make_instance([("f", 0, ONE), ("g", 0, ONE)])
    assert form_path(inst, {"f": 1, "g": 1}, "f", 10, np.random.default_rng(0)) == ["f"]


def test_path_single_bench_chain():
    ids = [f"c{k}" for k in range(5)]
    inst = make_instance([(b, 1, ONE) for b in ids], [(ids[k], ids[k - 1]) for k in range(1, 5)])
    w = base_weights(inst, Focal.MD)
    assert sorted(form_path(inst, w, "c2", 10, np.random.default_rng(1))) == ids


def test_path_stops_after_reaching_nbar():
    # focal with a large same-bench cone: whole cones are added atomically
    ids = [f"c{k}" for k in range(8)]
    inst = make_instance([(b, 1, ONE) for b in ids], [(ids[k], ids[k - 1]) for k in range(1, 8)])
    p = form_path(inst, base_weights(inst, Focal.RAND), "c4", 2, np.random.default_rng(0))
    assert len(p) >= 2
    assert set(p) == {"c4"} | restricted_cone_above(inst, "c4") | restricted_cone_below(inst, "c4")


def test_path_zero_weight_cone_sampled_uniformly():
    ids = [f"c{k}" for k in range(3)]
    inst = make_instance([(b, 1, ONE) for b in ids], [("c1", "c0"), ("c2", "c1")])
    p = form_path(inst, {b: 0.0 for b in ids}, "c1", 10, np.random.default_rng(0))
    assert sorted(p) == ids


# ---------------------------------------------------------------- blending


def _blend_inst():
    return make_instance([("b", 0, [(10.0, 1.0, {"Fe": 0.62})]), ("c", 0, [(10.0, 1.0, {"Fe": 0.60})])],
                         windows={"Fe": (0.60, 0.65)})


def test_blending_contribution_values():
    inst = _blend_inst()
    cb = blending_contribution(inst, "b")
    assert cb["R1", "Fe", "min"] == pytest.approx(0.2)
    assert cb["R1", "Fe", "max"] == pytest.approx(0.3)
    assert blending_contribution(inst, "c")["R1", "Fe", "min"] == pytest.approx(0.0)


def test_blending_contribution_unreachable_product():
    inst = make_instance([("b", 0, [(10.0, 1.0, {"Fe": 0.9})])], windows={"Fe": (0.6, 0.65)},
                         network=simple_network(products=("R1",)))
    net = inst.pits[0].network
    from dataclasses import replace
    cut = replace(net, arcs=tuple(a for a in net.arcs if a[1] != "P_R1") + (("crusher", "dumpR"),),
                  nodes=net.nodes + (type(net.nodes[0])("dumpR", "product", product="R1"),))
    # product reachable through another sink: still counted
    inst2 = replace(inst, pits=(replace(inst.pits[0], network=cut),))
    assert blending_contribution(inst2, "b")["R1", "Fe", "min"] != 0.0
    # now a second product nobody can reach
    from minelns.instance import Product
    inst3 = replace(inst, products=inst.products + (Product("R2", 1.0, {"Fe": (0.1, 0.2)}),))
    c = blending_contribution(inst3, "b")
    assert c["R2", "Fe", "min"] == 0.0 and c["R2", "Fe", "max"] == 0.0


def _harmful_instance():
    # h1, h2 far below the lower bound; g well above it
    blocks = [("h1", 0, [(10.0, 1.0, {"Fe": 0.2})]), ("h2", 0, [(10.0, 1.0, {"Fe": 0.3})]),
              ("g", 0, [(10.0, 1.0, {"Fe": 0.9})])]
    return make_instance(blocks, windows={"Fe": (0.6, 0.95)})


def test_blending_mask_excludes_harmful_focals():
    inst = _harmful_instance()
    inc = zero_solution(inst)
    w = base_weights(inst, Focal.RAND)
    for seed in range(1000):
        nb = form_neighbourhood(inst, inc, w, {Strategy.BLENDING}, 2, np.random.default_rng(seed))
        if nb.focals[0] in ("h1", "h2"):
            assert nb.focals[1] == "g"


def test_mask_only_lowers_weights():
    inst = _harmful_instance()
    f = _Formation(inst, zero_solution(inst), base_weights(inst, Focal.RAND), frozenset({Strategy.BLENDING}),
                   3, np.random.default_rng(0))
    ledger = {("R1", "Fe", "min"): -1.0}
    assert f.masked({}, ledger, None, set()) == {"g": 1.0}
    assert f.masked({}, {}, None, set()) == base_weights(inst, Focal.RAND)


# ---------------------------------------------------------------- neighbourhoods


def test_chain_neighbourhood_all_blocks():
    ids = [f"c{k}" for k in range(5)]
    inst = make_instance([(b, 1, ONE) for b in ids], [(ids[k], ids[k - 1]) for k in range(1, 5)])
    nb = form_neighbourhood(inst, zero_solution(inst), base_weights(inst, Focal.MD), set(), 5,
                            np.random.default_rng(0))
    assert nb.blocks == set(ids)


def test_neighbourhood_size_and_focals():
    inst = generate_instance(GenConfig(blocks_per_pit=30, benches_per_pit=3, periods=3), 0)
    w = base_weights(inst, Focal.RAND)
    for seed in range(20):
        nb = form_neighbourhood(inst, zero_solution(inst), w, set(), 7, np.random.default_rng(seed))
        assert set(nb.focals) <= nb.blocks
        assert len(nb.blocks) >= 7


def test_strategy_applicability():
    inst = chain_instance()
    w = base_weights(inst, Focal.RAND)
    for s in (Strategy.BLENDING, Strategy.PITLINKS, Strategy.TRIGGER):
        with pytest.raises(StrategyInapplicable):
            form_neighbourhood(inst, zero_solution(inst), w, {s}, 2, np.random.default_rng(0))
    with pytest.raises(EmptyWeightVector):
        form_neighbourhood(inst, zero_solution(inst), {b: 0.0 for b in w}, set(), 2, np.random.default_rng(0))


def _two_pit_capex():
    blocks = [("a1", 0, ONE, "M1"), ("a2", 0, ONE, "M1"), ("a3", 0, ONE, "M1"),
              ("b1", 0, ONE, "M2"), ("b2", 0, ONE, "M2")]
    return make_instance(blocks, periods=3, capex=1.0)


def test_trigger_neighbourhood_one_pit():
    inst = _two_pit_capex()
    inc = zero_solution(inst)
    for seed in range(30):
        nb = form_neighbourhood(inst, inc, base_weights(inst, Focal.RAND), {Strategy.TRIGGER}, 3,
                                np.random.default_rng(seed))
        # M1 alone fills the neighbourhood; M2 is short one block, taken from the head of M1
        assert nb.blocks in ({"a1", "a2", "a3"}, {"b1", "b2", "a1"})
    nb = form_neighbourhood(inst, inc, base_weights(inst, Focal.RAND), {Strategy.TRIGGER}, 2,
                            np.random.default_rng(0))
    assert nb.blocks in ({"a1", "a2"}, {"b1", "b2"})


def test_trigger_blocks_order():
    inst = _two_pit_capex()
    sol = zero_solution(inst)
    # a2 starts in period 1, a1 in period 2, a3 never
    for t in (1, 2, 3):
        sol.x["a2", t] = 1.0
    for t in (2, 3):
        sol.x["a1", t] = 0.5
    assert trigger_blocks(inst, "M1", sol) == ["a2", "a1", "a3"]
    assert trigger_blocks(inst, "M2", sol) == ["b1", "b2"]
    assert trigger_blocks(inst, "M1", sol)[:2] == ["a2", "a1"]
    with pytest.raises(UnknownPit):
        trigger_blocks(inst, "M9", sol)


def test_timing_window_restricts_later_focals():
    inst = generate_instance(GenConfig(blocks_per_pit=20, benches_per_pit=1, periods=6), 1)
    inc = _sol(inst)
    T = inst.periods
    w = base_weights(inst, Focal.RAND)
    for seed in range(30):
        nb = form_neighbourhood(inst, inc, w, {Strategy.TIMING}, 6, np.random.default_rng(seed))
        first = next((f for f in nb.focals if inc.start_finish(f, T)[0] <= T), None)
        assert first is not None
        s0, f0 = inc.start_finish(first, T)
        later = nb.focals[nb.focals.index(first) + 1:]
        for f in later:
            s, fin = inc.start_finish(f, T)
            assert s0 <= s <= f0 or s0 <= fin <= f0


def test_pitlinks_restricts_then_resets():
    blocks = [(f"{p}{k}", 0, ONE, pit) for p, pit in (("a", "M1"), ("b", "M2"), ("c", "M3")) for k in range(2)]
    inst = make_instance(blocks, periods=2, groups=[(("M1", "M2"), (0.0, 0.0))])
    w = base_weights(inst, Focal.RAND)
    for seed in range(50):
        nb = form_neighbourhood(inst, zero_solution(inst), w, {Strategy.PITLINKS}, 6, np.random.default_rng(seed))
        pits = [inst.block_map[f].pit for f in nb.focals]
        first_group = {"M1", "M2"} if pits[0] != "M3" else {"M3"}
        k = len(first_group) * 2
        # focals drawn before the reset stay inside the linked pits
        assert {inst.block_map[f].pit for f in nb.focals[:k]} <= first_group
        assert nb.blocks == {b for b, *_ in blocks}


# ---------------------------------------------------------------- fixing


def test_fix_sets_counts():
    inst = chain_instance(n=3, periods=4)
    inc = zero_solution(inst)
    everything = Neighbourhood({"b0", "b1", "b2"}, ["b0"])
    assert fix_set_for(inst, inc, everything, Fixing.SD, None) == {}
    empty = Neighbourhood(set(), [])
    assert len(fix_set_for(inst, inc, empty, Fixing.SD, None)) == 2 * 3 * 4


def test_unfix_window():
    inst = chain_instance(n=1, periods=15)
    sol = zero_solution(inst)
    for t in range(5, 16):
        sol.x["b0", t] = 1.0 if t >= 7 else 0.5
        sol.z["b0", t] = 1.0
    for t in range(7, 16):
        sol.y["b0", t] = 1.0
    fixes = fix_set_for(inst, sol, Neighbourhood({"b0"}, ["b0"]), Fixing.SD, 2)
    periods = sorted({k.period for k in fixes})
    assert periods == [1, 2, 10, 11, 12, 13, 14, 15]
    assert {k.kind for k in fixes} == {"Z", "Y"}


def test_unfix_window_clamps():
    inst = chain_instance(n=1, periods=10)
    sol = zero_solution(inst)
    nb = Neighbourhood({"b0"}, ["b0"])
    # never extracted: the whole horizon stays free
    assert fix_set_for(inst, sol, nb, Fixing.SD, 2) == {}
    # extracted from period 6, never depleted: free from 4 to the end
    for t in range(6, 11):
        sol.x["b0", t] = 0.3
        sol.z["b0", t] = 1.0
    assert sorted({k.period for k in fix_set_for(inst, sol, nb, Fixing.SD, 2)}) == [1, 2, 3]


def test_sdf_fixes_flows_of_untouched_pits():
    inst = _two_pit_capex()
    inc = zero_solution(inst)
    fixes = fix_set_for(inst, inc, Neighbourhood({"a1"}, ["a1"]), Fixing.SDF, None)
    flow_parcels = {k.index[0] for k in fixes if k.kind == "F"}
    assert flow_parcels == {"b1-p0", "b2-p0"}
    with pytest.raises(Exception):
        fix_set_for(inst, type(inc)(), Neighbourhood(set(), []), Fixing.SD, None)


def test_rins_fixes():
    inst = chain_instance(n=2, periods=2)
    inc = zero_solution(inst)
    keys = [k for k, _ in inc.items() if k.kind in INTEGER_KINDS]
    agree = SolveResult(Status.OPTIMAL, 0.0, 0.0, {k: 0.0 for k, _ in inc.items()})
    assert set(rins_fixes(agree, inc)) == set(keys)
    half = dict(agree.values)
    half[VarKey("Z", ("b0", 1))] = 0.5
    fixes = rins_fixes(SolveResult(Status.OPTIMAL, 0.0, 0.0, half), inc, 1e-5)
    assert VarKey("Z", ("b0", 1)) not in fixes and len(fixes) == len(keys) - 1
    with pytest.raises(MissingValues):
        rins_fixes(SolveResult(Status.INFEASIBLE), inc)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.2))
def test_rins_matches_filter(seed, tol):
    inst = chain_instance(n=3, periods=3)
    rng = np.random.default_rng(seed)
    inc = zero_solution(inst)
    for k, _ in list(inc.items()):
        inc[k] = float(rng.integers(2)) if k.kind in INTEGER_KINDS else 0.0
    lp = {k: float(rng.choice([0.0, 1.0, rng.random()])) for k, _ in inc.items()}
    fixes = rins_fixes(SolveResult(Status.OPTIMAL, 0.0, 0.0, lp), inc, tol)
    assert fixes == {k: inc[k] for k in lp if k.kind in INTEGER_KINDS and abs(lp[k] - inc[k]) <= tol}


# ---------------------------------------------------------------- termination and store


def test_improvement_rate():
    assert improvement_rate([2, 0, 1], 3) == pytest.approx(1.0)
    assert improvement_rate([0, 0], 2) == 0.0
    assert improvement_rate([5], 1) == 5.0
    with pytest.raises(EmptyHistory):
        improvement_rate([], 0)


def test_should_terminate():
    term = Termination(time_limit=100, improve_rate=1.0, min_iters=3)
    assert should_terminate(100, 0, [], term)
    assert not should_terminate(1, 2, [0, 0], term)
    assert should_terminate(1, 3, [0, 0, 0], term)
    assert not should_terminate(1, 3, [3, 0, 0], term)
    with pytest.raises(ConfigError):
        Termination(min_iters=0)


def test_incumbent_store_strict():
    inst = chain_instance(n=1, periods=1)
    base = zero_solution(inst)
    store = IncumbentStore(base)
    better = base.copy()
    better.objective = 1.0
    tie = base.copy()
    tie.objective = 1.0 + 1e-12
    # percent gain over a zero objective uses the 1e-10 floor on the denominator
    assert store.publish(better, 0.1, 1, 0) == pytest.approx(100.0 / 1e-10)
    assert store.publish(tie, 0.2, 2, 0) is None
    assert store.best is better
    assert [h[4] for h in store.history] == [True, False]


def test_config_validation():
    with pytest.raises(ConfigError):
        LnsConfig(nbar=0)
    with pytest.raises(ConfigError):
        LnsConfig(workers=0)
    with pytest.raises(ConfigError):
        LnsConfig(uw=-1)
    assert LnsConfig(focal_method="mix").focal_method == Focal.MIX


# ---------------------------------------------------------------- engine


def test_optimal_start_stays_put():
    inst = generate_instance(GenConfig(blocks_per_pit=4, benches_per_pit=1, periods=3), 0)
    opt = _sol(inst, SolveParams(mip_gap=0.0))
    opt.objective = npv(inst, opt)
    cfg = LnsConfig(nbar=2, workers=2, term=Termination(60, 1.0, 4))
    best, trace = run_lns(inst, opt, cfg)
    assert best.objective == opt.objective
    assert not any(trace.column("accepted"))


def test_rejects_infeasible_start():
    inst = make_instance([("b1", 0, ONE)], periods=1, groups=[(("M1",), (0.5,))])
    with pytest.raises(ConfigError):
        run_lns(inst, zero_solution(inst), LnsConfig())


def _strip(trace):
    return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in trace.rows]


def test_single_worker_reproducible():
    inst, ref = generate_with_reference(GenConfig(blocks_per_pit=16, benches_per_pit=2, periods=5), 3)
    cfg = LnsConfig(nbar=5, workers=1, seed=4, term=Termination(600, 0.5, 8))
    a = run_lns(inst, ref, cfg)
    b = run_lns(inst, ref, cfg)
    assert _strip(a[1]) == _strip(b[1])
    assert a[0].objective == b[0].objective


@pytest.mark.parametrize("focal,fixing,rins,uw", [("md", "sd", True, None), ("mix", "sdf", False, 1),
                                                  ("obj", "sd", False, 0), ("rand", "sdf", True, 2)])
def test_parallel_run_monotone_and_clean(focal, fixing, rins, uw):
    cfg = GenConfig(pits=2, blocks_per_pit=10, benches_per_pit=2, periods=4, blending=True, capex=True,
                    min_production=True, waste_dump=True, elements=2)
    inst, ref = generate_with_reference(cfg, 6)
    strategies = {Strategy.BLENDING, Strategy.TIMING, Strategy.PITLINKS, Strategy.TRIGGER}
    lc = LnsConfig(nbar=6, focal_method=focal, fixing=fixing, rins=rins, uw=uw, workers=4, seed=1,
                   strategies=strategies, term=Termination(120, 0.5, 12))
    best, trace = run_lns(inst, ref, lc)
    accepted = [r["objective"] for r in trace.rows if r["accepted"]]
    assert all(b > a for a, b in zip(accepted, accepted[1:]))
    assert best.objective >= ref.objective
    assert validate(inst, best, 1e-5).ok
    assert best.objective == pytest.approx(npv(inst, best))
    assert set(trace.column("strategy")) <= {s.value for s in strategies}
