import numpy as np
import pytest

from dbenders.benders import eval_sub_dual
from dbenders.lp import OPTIMAL, solve_lp
from dbenders.problems import (
    BadShape,
    ConstructionFailed,
    SnipInstance,
    TooLarge,
    _max_reliability,
    brute_force_solve,
    build_motivating_analog,
    enumerate_feasible,
    gen_random_milp,
    gen_snip,
    gen_uflp,
    snip_block_milp,
    snip_scenario_value_dp,
)
from dbenders.benders import extensive_model


def test_uflp_fixed_costs_open_both():
    _, milp = gen_uflp(2, 2, fixed=[1.0, 1.0], cost=[[0.0, 2.0], [2.0, 0.0]])
    obj, x = brute_force_solve(milp)
    assert obj == pytest.approx(2.0, abs=1e-9)
    assert np.allclose(x, [1.0, 1.0])


def test_uflp_expensive_fixed_costs_still_open_both():
    _, milp = gen_uflp(2, 2, fixed=[10.0, 10.0], cost=[[0.0, 2.0], [2.0, 0.0]])
    obj, x = brute_force_solve(milp)
    assert obj == pytest.approx(20.0, abs=1e-9)
    assert np.allclose(x, [1.0, 1.0])


def test_uflp_extensive_equals_benders_form_value():
    for seed in (0, 2):
        _, milp = gen_uflp(3, 4, seed=seed, cost_class="a")
        ref, _ = brute_force_solve(milp)
        from dbenders.benders import solve_extensive
        res = solve_extensive(milp)
        assert res.objective == pytest.approx(ref, abs=1e-6)


def test_uflp_shape_guard():
    with pytest.raises(BadShape):
        gen_uflp(1, 5)
    with pytest.raises(BadShape):
        gen_uflp(3, 3, cost_class="z")


def test_snip_budget_zero_is_psi_mix():
    inst, milp = gen_snip(n_nodes=8, arc_density=0.7, n_sensor_arcs=4,
                          n_scenarios=3, budget=0.0, seed=4)
    obj, _ = brute_force_solve(milp)
    expect = sum(p * inst.psi[o, k] for k, (o, d, p) in enumerate(inst.scenarios))
    assert obj == pytest.approx(expect, abs=1e-8)


def test_snip_single_arc_full_interdiction():
    psi = np.array([[1.0], [1.0]])
    inst = SnipInstance(n_nodes=2, arcs=[(0, 1)], sensor_arcs=[0],
                        r=np.array([1.0]), q=np.array([0.0]),
                        scenarios=[(0, 1, 1.0)], budget=1.0, psi=psi)
    milp = snip_block_milp(inst)
    obj, x = brute_force_solve(milp)
    assert obj == pytest.approx(0.0, abs=1e-9)
    assert x[0] == pytest.approx(1.0)


def test_snip_diamond_matches_brute_force_over_sensors():
    # 4-node diamond: 0 -> {1, 2} -> 3, sensors everywhere, budget 1
    arcs = [(0, 1), (0, 2), (1, 3), (2, 3)]
    r = np.array([0.9, 0.8, 0.7, 0.9])
    q = np.array([0.2, 0.1, 0.3, 0.0])
    psi = np.zeros((4, 1))
    psi[:, 0] = _max_reliability(4, arcs, r, 3)
    inst = SnipInstance(n_nodes=4, arcs=arcs, sensor_arcs=[0, 1, 2, 3],
                        r=r, q=q, scenarios=[(0, 3, 1.0)], budget=1.0, psi=psi)
    milp = snip_block_milp(inst)
    obj, xbest = brute_force_solve(milp)
    # direct enumeration over sensor placements via the DP evaluator
    best = np.inf
    for mask in range(16):
        x = np.array([(mask >> i) & 1 for i in range(4)], dtype=float)
        if x.sum() > 1.0 + 1e-9:
            continue
        best = min(best, snip_scenario_value_dp(inst, x, 0))
    assert obj == pytest.approx(best, abs=1e-8)


def test_snip_second_stage_lp_equals_dp():
    inst, milp = gen_snip(n_nodes=10, arc_density=0.6, n_sensor_arcs=5,
                          n_scenarios=4, budget=2.0, seed=9)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.integers(0, 2, size=len(inst.sensor_arcs)).astype(float)
        for k in range(len(inst.scenarios)):
            ev = eval_sub_dual(milp, x, scenario=k)
            p = inst.scenarios[k][2]
            assert ev.value == pytest.approx(p * snip_scenario_value_dp(inst, x, k), abs=1e-8)


def test_motivating_analog_properties():
    milp = build_motivating_analog(seed=0)
    feas = enumerate_feasible(milp)
    assert len(feas) == 2
    pts = sorted(tuple(int(round(v)) for v in x) for x, _ in feas)
    assert pts == [(0, 0), (0, 1)]
    assert all(f == 0.0 for _, f in feas)
    obj, x = brute_force_solve(milp)
    assert obj == pytest.approx(-1.0, abs=1e-12)
    assert tuple(np.round(x).astype(int)) == (0, 1)


def test_brute_force_one_binary_vee():
    from dbenders.benders import BlockMilp
    milp = BlockMilp(
        c=np.array([0.0]), d=np.array([1.0]),
        A=np.array([[1.0], [-1.0]]), B=np.array([[1.0], [1.0]]), b=np.array([1.0, 0.0]),
        D=np.zeros((0, 1)), h=np.zeros(0),
        lower=np.zeros(1), upper=np.ones(1), integer=[0],
    )
    obj, _ = brute_force_solve(milp)
    assert obj == pytest.approx(1.0, abs=1e-9)  # min over {0,1} of max(1-x, x)


def test_brute_force_infeasible_instance():
    from dbenders.benders import BlockMilp
    milp = BlockMilp(
        c=np.array([0.0]), d=np.array([0.0]),
        A=np.array([[0.0]]), B=np.array([[0.0]]), b=np.array([1.0]),  # 0 >= 1
        D=np.zeros((0, 1)), h=np.zeros(0),
        lower=np.zeros(1), upper=np.ones(1), integer=[0],
    )
    obj, x = brute_force_solve(milp)
    assert obj == np.inf and x is None


def test_brute_force_enumeration_cap():
    milp = gen_random_milp(0, n_x=8, n_y=3, m=5)
    with pytest.raises(TooLarge):
        brute_force_solve(milp, cap=100)


def test_random_milp_assumptions_hold():
    for seed in range(5):
        milp = gen_random_milp(seed)
        milp.validate()  # finite bounds + nonempty dual region
        assert np.all(np.isfinite(milp.lower)) and np.all(np.isfinite(milp.upper))


def test_random_milp_with_scenarios_partitions():
    milp = gen_random_milp(3, with_scenarios=True)
    milp.validate()
    assert milp.n_t == 2
    ref_plain, _ = brute_force_solve(milp)
    # scenario evaluation must agree with the extensive LP per assignment
    ext = extensive_model(milp)
    lo = ext.lower.copy(); up = ext.upper.copy()
    x = np.zeros(milp.n_x)
    for j in milp.integer:
        lo[j] = up[j] = 0.0
    out = solve_lp(ext.with_bounds(lo, up))
    from dbenders.problems import value_at
    f = value_at(milp, x)
    if out.status == OPTIMAL:
        assert f == pytest.approx(out.objective - milp.c @ x, abs=1e-7)
    else:
        assert not np.isfinite(f)
