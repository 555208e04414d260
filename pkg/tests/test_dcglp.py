import numpy as np
import pytest

from dbenders.benders import BlockMilp, ClassicalOracle, Cut, ScenarioBlock
from dbenders.dcglp import (
    BadNorm,
    CONVERGED,
    DcglpConfig,
    GAP_REACHED,
    INSIDE_HULL,
    OracleState,
    BlockPoint,
    build_dcglp,
    raise_cut,
    simple_split,
    the_oracle,
    the_oracle_separable,
    upper_bound_update,
)
from dbenders.problems import enumerate_feasible, gen_random_milp

from _oracles import assert_cut_valid, full_dcglp_value


def vee_milp():
    # f(x) = max(1 - x, x) on one binary x
    return BlockMilp(
        c=np.array([0.0]), d=np.array([1.0]),
        A=np.array([[1.0], [-1.0]]), B=np.array([[1.0], [1.0]]), b=np.array([1.0, 0.0]),
        D=np.zeros((0, 1)), h=np.zeros(0),
        lower=np.zeros(1), upper=np.ones(1), integer=[0],
    )


def vee_milp_two_copies():
    # two independent copies of the vee subproblem sharing the binary x
    A = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    B = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    return BlockMilp(
        c=np.array([0.0]), d=np.array([1.0, 1.0]),
        A=A, B=B, b=np.array([1.0, 0.0, 1.0, 0.0]),
        D=np.zeros((0, 1)), h=np.zeros(0),
        lower=np.zeros(1), upper=np.ones(1), integer=[0],
        scenarios=[ScenarioBlock(rows=[0, 1], y_cols=[0]),
                   ScenarioBlock(rows=[2, 3], y_cols=[1])],
    )


def tight_config(**kw):
    base = dict(gap=1e-10, stall_limit=50, max_iterations=500)
    base.update(kw)
    return DcglpConfig(**base)


def test_raise_cut_examples():
    r = raise_cut(Cut(alpha_x=np.array([1.0]), alpha_t=1.0, alpha_0=5.0, kind="optimality"))
    # t >= 5 - x  becomes  kappa_x + kappa_t - 5 kappa_0 >= 0
    assert r.alpha_x[0] == 1.0 and r.alpha_t[0] == 1.0 and r.alpha_0 == 5.0
    r = raise_cut(Cut(alpha_x=np.array([1.0]), alpha_t=0.0, alpha_0=2.0, kind="feasibility"))
    assert r.alpha_t[0] == 0.0 and r.alpha_0 == 2.0
    r = raise_cut(Cut(alpha_x=np.zeros(1), alpha_t=1.0, alpha_0=-1e99, kind="optimality"))
    assert r.alpha_0 == -1e99 and r.alpha_t[0] == 1.0


def test_build_dcglp_minimal_rows():
    milp = vee_milp()
    seed = Cut(alpha_x=np.array([1.0]), alpha_t=1.0, alpha_0=1.0, kind="optimality")
    model = build_dcglp(milp, simple_split(0, 1), (np.array([0.5]), np.array([0.5])),
                        seed_cuts=[seed])
    # per block: 2 bound-lower + 2*... here n_x=1: 1 lower + 1 upper + 1 split = 3
    # plus linking 1 + n_x + n_t = 3, norm 2*(n_x+n_t) = 4, pool 2 (seed twins)
    assert model.lp.n_rows == 2 * 3 + 3 + 4 + 2
    # phi = e_0, phi0 = 0: split rows are kappa_x >= kappa_0 and -nu_x >= 0
    k_split = [i for i, t in enumerate(model.row_tags) if t[0] == "sigma" and t[1] == "kappa"][0]
    row = model.lp.rows[k_split]
    assert row[0] == 1.0 and row[model.off_kappa + 2] == -1.0
    n_split = [i for i, t in enumerate(model.row_tags) if t[0] == "sigma" and t[1] == "nu"][0]
    row = model.lp.rows[n_split]
    assert row[model.off_nu] == -1.0 and row[model.off_nu + 2] == 0.0


def test_build_dcglp_prev_cuts_add_two_rows_each():
    milp = vee_milp()
    seed = Cut(alpha_x=np.array([1.0]), alpha_t=1.0, alpha_0=1.0, kind="optimality")
    prev = [Cut(alpha_x=np.array([0.0]), alpha_t=1.0, alpha_0=1.0, kind="disjunctive"),
            Cut(alpha_x=np.array([-1.0]), alpha_t=1.0, alpha_0=0.0, kind="disjunctive")]
    base = build_dcglp(milp, simple_split(0, 1), (np.array([0.5]), np.array([0.5])),
                       seed_cuts=[seed])
    extended = build_dcglp(milp, simple_split(0, 1), (np.array([0.5]), np.array([0.5])),
                           seed_cuts=[seed], prev_disjunctive=prev)
    assert extended.lp.n_rows == base.lp.n_rows + 2 * len(prev)


def test_bad_norm_rejected():
    milp = vee_milp()
    with pytest.raises(BadNorm):
        build_dcglp(milp, simple_split(0, 1), (np.array([0.5]), np.array([0.5])), p=2)


def test_toy_oracle_exact_cut():
    milp = vee_milp()
    res = the_oracle(milp, simple_split(0, 1), (np.array([0.5]), 0.5),
                     ClassicalOracle(milp), tight_config())
    assert res.status == CONVERGED
    assert res.tau == pytest.approx(0.5, abs=1e-9)
    assert res.cut.alpha_x[0] == pytest.approx(0.0, abs=1e-9)
    assert float(res.cut.alpha_t) == pytest.approx(1.0, abs=1e-9)
    assert res.cut.alpha_0 == pytest.approx(1.0, abs=1e-9)


def test_toy_point_inside_hull():
    milp = vee_milp()
    res = the_oracle(milp, simple_split(0, 1), (np.array([0.5]), 1.5),
                     ClassicalOracle(milp), tight_config())
    assert res.status == INSIDE_HULL
    assert res.tau <= 1e-7


def test_projection_equivalence_on_toy():
    milp = vee_milp()
    exact, _ = full_dcglp_value(milp, simple_split(0, 1), (np.array([0.5]), 0.5))
    assert exact == pytest.approx(0.5, abs=1e-9)


def test_separable_single_block_reduces_to_plain():
    milp2 = vee_milp_two_copies()
    single = BlockMilp(
        c=milp2.c, d=np.array([1.0]),
        A=np.array([[1.0], [-1.0]]), B=np.array([[1.0], [1.0]]), b=np.array([1.0, 0.0]),
        D=np.zeros((0, 1)), h=np.zeros(0),
        lower=np.zeros(1), upper=np.ones(1), integer=[0],
        scenarios=[ScenarioBlock(rows=[0, 1], y_cols=[0])],
    )
    res_sep = the_oracle_separable(single, simple_split(0, 1),
                                   (np.array([0.5]), np.array([0.5])),
                                   ClassicalOracle(single), tight_config())
    res_plain = the_oracle(single, simple_split(0, 1), (np.array([0.5]), 0.5),
                           ClassicalOracle(single), tight_config())
    assert res_sep.tau == pytest.approx(res_plain.tau, abs=1e-9)
    assert float(np.atleast_1d(res_sep.cut.alpha_t)[0]) == pytest.approx(
        float(res_plain.cut.alpha_t), abs=1e-9)


def test_separable_two_copies_matches_hand_hull():
    # hull of the two-sided region is {0<=x<=1, t_1>=1, t_2>=1}; the l_inf
    # projection of (0.5, 0.25, 0.25) moves both t's to 1: distance 0.75
    milp = vee_milp_two_copies()
    point = (np.array([0.5]), np.array([0.25, 0.25]))
    res = the_oracle_separable(milp, simple_split(0, 1), point,
                               ClassicalOracle(milp), tight_config())
    assert res.status == CONVERGED
    assert res.tau == pytest.approx(0.75, abs=1e-8)
    exact, _ = full_dcglp_value(milp, simple_split(0, 1), point)
    assert exact == pytest.approx(res.tau, abs=1e-8)
    # gamma-normalized deepest cut: violation at the point equals tau
    assert res.cut.violation(point[0], point[1]) == pytest.approx(res.tau, abs=1e-8)


def test_scenario_oracle_receives_block_local_t():
    milp = vee_milp_two_copies()
    seen = []

    class Spy:
        def __init__(self, inner):
            self.inner = inner

        def query(self, x, t_val, scenario=None, viol_tol=1e-6):
            seen.append((scenario, float(t_val)))
            return self.inner.query(x, t_val, scenario=scenario, viol_tol=viol_tol)

    the_oracle_separable(milp, simple_split(0, 1), (np.array([0.5]), np.array([0.25, 0.25])),
                         Spy(ClassicalOracle(milp)), tight_config(max_iterations=3))
    assert seen and all(sc in (0, 1) for sc, _ in seen)


def test_upper_bound_update_cases():
    kappa = BlockPoint(x=np.array([0.3]), t=np.array([0.4]), w0=0.5)
    nu = BlockPoint(x=np.array([0.2]), t=np.array([0.6]), w0=0.5)
    s_x = np.array([0.0])
    t_hat = np.array([0.5])
    # both inside: UB candidate equals the plain objective residual norm
    st = OracleState(s_x=s_x, t_hat=t_hat, kappa=kappa, nu=nu,
                     inside={("kappa", 0): True, ("nu", 0): True},
                     norm="linf", upper_bound=np.inf)
    ub = upper_bound_update(st, {})
    assert ub == pytest.approx(0.5)  # |0.4 + 0.6 - 0.5|
    # infinite f on a needed block: UB unchanged
    st = OracleState(s_x=s_x, t_hat=t_hat, kappa=kappa, nu=nu,
                     inside={("kappa", 0): False, ("nu", 0): True},
                     norm="linf", upper_bound=7.0)
    assert upper_bound_update(st, {("kappa", 0): np.inf}) == 7.0
    # finite f replaces the t block value
    ub = upper_bound_update(st, {("kappa", 0): 2.0})
    assert ub == pytest.approx(min(7.0, abs(0.5 * 2.0 + 0.6 - 0.5)))


def test_toy_upper_bound_monotone():
    milp = vee_milp()
    cfg = tight_config(record_history=True)
    res = the_oracle(milp, simple_split(0, 1), (np.array([0.5]), 0.0),
                     ClassicalOracle(milp), cfg)
    assert np.isfinite(res.upper_bound)
    taus = [t for t, _ in res.history]
    assert all(a <= b + 1e-9 for a, b in zip(taus, taus[1:]))  # tau nondecreasing


def test_history_cuts_all_valid_and_tau_monotone():
    # Prop-4 analog: every intermediate dual cut is already valid
    for seed in (0, 5):
        milp = gen_random_milp(seed, n_x=3, n_y=3, m=5)
        x_hat = np.full(3, 0.5)
        cfg = tight_config(record_history=True)
        res = the_oracle(milp, simple_split(0, 3), (x_hat, -5.0),
                         ClassicalOracle(milp), cfg)
        feas = enumerate_feasible(milp)
        if not feas:
            continue
        taus = [t for t, _ in res.history]
        assert all(a <= b + 1e-9 for a, b in zip(taus, taus[1:]))
        for _, cut in res.history:
            assert_cut_valid(milp, cut, tol=1e-6, feas=feas)


def test_projection_equivalence_random_tiny():
    # Lemma-1 check: iterative tau equals the one-shot enumerated value
    hits = 0
    for seed in range(8):
        milp = gen_random_milp(seed, n_x=3, n_y=2, m=4)
        x_hat = np.array([0.5, 0.3, 0.7])
        point = (x_hat, np.array([-1.0]))
        res = the_oracle(milp, simple_split(0, 3), (x_hat, -1.0),
                         ClassicalOracle(milp), tight_config())
        exact, _ = full_dcglp_value(milp, simple_split(0, 3), point)
        assert res.tau == pytest.approx(exact, abs=1e-6)
        hits += 1
    assert hits == 8


def test_supporting_hyperplane_at_convergence():
    milp = vee_milp()
    res = the_oracle(milp, simple_split(0, 1), (np.array([0.5]), 0.5),
                     ClassicalOracle(milp), tight_config())
    assert res.status == CONVERGED
    proj_x = res.kappa.x + res.nu.x
    proj_t = res.kappa.t + res.nu.t
    slack = res.cut.alpha_0 - res.cut.alpha_x @ proj_x - float(res.cut.alpha_t) * proj_t[0]
    assert abs(slack) <= 1e-6
    # de-homogenized block points land in their side of the disjunction
    for bp, side in ((res.kappa, "ge"), (res.nu, "le")):
        if bp.w0 > 1e-6:
            x = bp.x / bp.w0
            if side == "ge":
                assert x[0] >= 1.0 - 1e-6
            else:
                assert x[0] <= 0.0 + 1e-6


def test_normalization_bound_and_strict_cutoff():
    for seed in (1, 3):
        milp = gen_random_milp(seed, n_x=3, n_y=3, m=5)
        x_hat = np.full(3, 0.5)
        res = the_oracle(milp, simple_split(1, 3), (x_hat, -3.0),
                         ClassicalOracle(milp), tight_config())
        gx, gt = res.cut.alpha_x, np.atleast_1d(res.cut.alpha_t)
        q_norm = float(np.sum(np.abs(np.concatenate([gx, gt]))))  # q=1 for p=inf
        assert q_norm <= 1.0 + 1e-6
        if res.status != INSIDE_HULL and q_norm >= 1.0 - 1e-6:
            viol = res.cut.violation(x_hat, -3.0)
            assert viol == pytest.approx(res.tau, abs=1e-6)


def test_gap_termination_with_loose_gap():
    milp = vee_milp()
    res = the_oracle(milp, simple_split(0, 1), (np.array([0.5]), 0.0),
                     ClassicalOracle(milp), DcglpConfig(gap=0.9, stall_limit=99))
    assert res.status in (GAP_REACHED, CONVERGED)
    # even under early termination the cut must remain valid
    assert_cut_valid(milp, res.cut, tol=1e-6)
