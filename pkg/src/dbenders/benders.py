"""Benders machinery: subproblem duals, typical oracles, and the two drivers.

The structured instance is

    min c'x + d'y   s.t.  A x + B y >= b,
                          x in X = {l <= x <= u, D x >= h, x_i integral on I},

whose projection onto (x, t)-space replaces d'y with an epigraph variable t
bounded by optimality cuts t >= pi'(b - A x) (dual extreme points) and
feasibility cuts 0 >= pi'(b - A x) (dual extreme rays).  When the instance
carries a scenario partition the subproblem separates and the master holds
one t_j per block with per-scenario cuts.

Two candidate-generation drivers are provided: benders_seq solves the
evolving master to optimality each round, while benders_bnb runs a single
branch-and-bound tree whose lazy callback separates incumbents (and whose
optional user callback injects disjunctive cuts at fractional nodes).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from dbenders import bnb as bnb_mod
from dbenders.lp import (
    EQ,
    GE,
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LpModel,
    add_rows_and_resolve,
    solve_lp,
)

CUT_VIOL_TOL = 1e-6
TRIVIAL_T_LOWER = -1e99

STATUS_ITER_LIMIT = "iter_limit"


class DualEmpty(Exception):
    """The dual feasible region of the subproblem is empty (pathological)."""


class InstanceShape(Exception):
    pass


@dataclass
class ScenarioBlock:
    rows: list[int]
    y_cols: list[int]


@dataclass
class BlockMilp:
    """Structured MILP data; all coupling rows are A x + B y >= b."""

    c: np.ndarray
    d: np.ndarray
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    D: np.ndarray
    h: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: list[int]
    scenarios: list[ScenarioBlock] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        n_x, n_y = self.c.shape[0], self.d.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n_x)
        self.B = np.asarray(self.B, dtype=float).reshape(-1, n_y) if n_y else np.zeros((self.A.shape[0], 0))
        self.b = np.asarray(self.b, dtype=float)
        self.D = np.asarray(self.D, dtype=float).reshape(-1, n_x)
        self.h = np.asarray(self.h, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.integer = sorted(int(j) for j in self.integer)

    @property
    def n_x(self) -> int:
        return self.c.shape[0]

    @property
    def n_y(self) -> int:
        return self.d.shape[0]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_t(self) -> int:
        return len(self.scenarios) if self.scenarios else 1

    def scenario_ids(self):
        return list(range(len(self.scenarios))) if self.scenarios else [None]

    def block(self, scenario):
        """(A_j, B_j, b_j, d_j) restricted to a scenario block (or the whole)."""
        if scenario is None:
            return self.A, self.B, self.b, self.d
        blk = self.scenarios[scenario]
        rows = np.asarray(blk.rows, dtype=int)
        cols = np.asarray(blk.y_cols, dtype=int)
        return self.A[rows], self.B[np.ix_(rows, cols)], self.b[rows], self.d[cols]

    def validate(self):
        """Assumption checks: finite bounds, exact partition, nonempty duals."""
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise InstanceShape("x bounds must be finite")
        if np.any(self.lower > self.upper):
            raise InstanceShape("crossed bounds")
        if self.scenarios:
            rows = sorted(r for blk in self.scenarios for r in blk.rows)
            cols = sorted(c for blk in self.scenarios for c in blk.y_cols)
            if rows != list(range(self.n_rows)) or cols != list(range(self.n_y)):
                raise InstanceShape("scenario blocks must partition rows and y columns")
        for sc in self.scenario_ids():
            _, Bj, _, dj = self.block(sc)
            if Bj.shape[1] == 0:
                continue  # Pi = {pi >= 0}, trivially nonempty
            check = LpModel(
                c=np.zeros(Bj.shape[0]),
                rows=Bj.T,
                relations=[EQ] * Bj.shape[1],
                rhs=dj,
                lower=np.zeros(Bj.shape[0]),
                upper=np.full(Bj.shape[0], np.inf),
            )
            if solve_lp(check).status != OPTIMAL:
                raise DualEmpty(f"dual region empty for scenario {sc}")


@dataclass(eq=False)
class Cut:
    """Linear inequality alpha_x'x + alpha_t't >= alpha_0 in (x, t)-space.

    alpha_t is a scalar applying to the scenario's t component (dense
    t-vectors appear only for disjunctive cuts on separable masters).
    """

    alpha_x: np.ndarray
    alpha_t: float | np.ndarray
    alpha_0: float
    kind: str            # "optimality" | "feasibility" | "disjunctive"
    scenario: int | None = None

    def t_coefs(self, n_t: int) -> np.ndarray:
        if isinstance(self.alpha_t, np.ndarray):
            if self.alpha_t.shape[0] != n_t:
                raise InstanceShape("cut t-vector length mismatch")
            return self.alpha_t
        v = np.zeros(n_t)
        if self.alpha_t != 0.0:
            v[self.scenario if self.scenario is not None else 0] = self.alpha_t
        return v

    def row(self, n_x: int, n_t: int):
        coef = np.concatenate([self.alpha_x, self.t_coefs(n_t)])
        return coef, GE, self.alpha_0

    def violation(self, x: np.ndarray, t) -> float:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return float(self.alpha_0 - self.alpha_x @ x - self.t_coefs(t.shape[0]) @ t)


@dataclass
class OracleReply:
    inside: bool
    cut: Cut | None
    value: float | None = None   # f(x') or f_j(x'), +inf when sub infeasible


@dataclass
class SubEval:
    feasible: bool
    value: float
    dual: np.ndarray | None = None
    ray: np.ndarray | None = None


def eval_sub_dual(milp: BlockMilp, x: np.ndarray, scenario=None) -> SubEval:
    """Value f(x) with a maximizing dual, or an infeasibility ray."""
    Aj, Bj, bj, dj = milp.block(scenario)
    rhs = bj - Aj @ x
    if Bj.shape[1] == 0:
        # no second stage: f = 0 on {0 >= b - A x}, +inf elsewhere
        viol = rhs > 1e-9
        if np.any(viol):
            ray = np.zeros(len(rhs))
            ray[int(np.argmax(rhs))] = 1.0
            return SubEval(feasible=False, value=np.inf, ray=ray)
        return SubEval(feasible=True, value=0.0, dual=np.zeros(len(rhs)))
    sub = LpModel(
        c=dj,
        rows=Bj,
        relations=[GE] * Bj.shape[0],
        rhs=rhs,
        lower=np.full(Bj.shape[1], -np.inf),
        upper=np.full(Bj.shape[1], np.inf),
    )
    out = solve_lp(sub)
    if out.status == OPTIMAL:
        return SubEval(feasible=True, value=out.objective, dual=out.duals)
    if out.status == INFEASIBLE:
        return SubEval(feasible=False, value=np.inf, ray=out.farkas_ray)
    raise DualEmpty("subproblem unbounded below: dual region is empty")


def classical_typical_oracle(milp: BlockMilp, x: np.ndarray, t_val: float,
                             scenario=None, viol_tol: float = CUT_VIOL_TOL) -> OracleReply:
    """Classical Benders separation of (x, t_val) from L (or L_j)."""
    Aj, _, bj, _ = milp.block(scenario)
    ev = eval_sub_dual(milp, x, scenario)
    if not ev.feasible:
        cut = Cut(alpha_x=Aj.T @ ev.ray, alpha_t=0.0, alpha_0=float(ev.ray @ bj),
                  kind="feasibility", scenario=scenario)
        return OracleReply(inside=False, cut=cut, value=np.inf)
    if t_val < ev.value - viol_tol:
        cut = Cut(alpha_x=Aj.T @ ev.dual, alpha_t=1.0, alpha_0=float(ev.dual @ bj),
                  kind="optimality", scenario=scenario)
        return OracleReply(inside=False, cut=cut, value=ev.value)
    return OracleReply(inside=True, cut=None, value=ev.value)


def uflp_knapsack_oracle(instance, x: np.ndarray, t, viol_tol: float = CUT_VIOL_TOL,
                         customers=None) -> list[OracleReply]:
    """Closed-form per-customer separation for UFLP-shaped instances.

    Customer j solves min sum_i c_ij y_ij s.t. sum_i y_ij = 1, 0 <= y_ij <= x_i:
    fill greedily by ascending cost; the critical cost u and the multipliers
    w_i = max(0, u - c_ij) give the cut t_j >= u - sum_i w_i x_i.  Requires
    sum_i x_i >= 1, which the master row sum x >= 2 guarantees.
    """
    costs = np.asarray(instance.cost, dtype=float)
    if costs.ndim != 2 or costs.shape[0] != x.shape[0]:
        raise InstanceShape("not UFLP-shaped: cost must be (facilities, customers)")
    n_i, n_j = costs.shape
    t = np.atleast_1d(np.asarray(t, dtype=float))
    replies = []
    for j in customers if customers is not None else range(n_j):
        cj = costs[:, j]
        order = np.argsort(cj, kind="stable")
        remaining = 1.0
        value = 0.0
        crit = None
        for i in order:
            take = min(x[i], remaining)
            value += take * cj[i]
            remaining -= take
            if remaining <= 1e-12:
                crit = cj[i]
                break
        if crit is None:
            raise InstanceShape("sum x < 1: master row should prevent this query")
        if t[j] < value - viol_tol:
            w = np.maximum(0.0, crit - cj)
            cut = Cut(alpha_x=w, alpha_t=1.0, alpha_0=float(crit),
                      kind="optimality", scenario=j)
            replies.append(OracleReply(inside=False, cut=cut, value=value))
        else:
            replies.append(OracleReply(inside=True, cut=None, value=value))
    return replies


class ClassicalOracle:
    """Typical-oracle adapter over eval_sub_dual, one query per scenario."""

    def __init__(self, milp: BlockMilp):
        self.milp = milp

    def query(self, x, t_val, scenario=None, viol_tol=CUT_VIOL_TOL) -> OracleReply:
        return classical_typical_oracle(self.milp, x, t_val, scenario, viol_tol)


class UflpOracle:
    """Solver-free UFLP oracle ("fat" variant: one cut per violated customer)."""

    def __init__(self, instance, milp: BlockMilp):
        self.instance = instance
        self.milp = milp

    def query(self, x, t_val, scenario=None, viol_tol=CUT_VIOL_TOL) -> OracleReply:
        j = scenario if scenario is not None else 0
        t = np.zeros(max(j + 1, 1))
        t[j] = t_val
        return uflp_knapsack_oracle(self.instance, x, t, viol_tol, customers=[j])[0]


@dataclass
class BendersConfig:
    master_integer: bool = True
    cut_viol_tol: float = CUT_VIOL_TOL
    max_iters: int = 100_000
    opt_gap: float = 1e-6
    time_limit: float | None = None
    node_limit: int | None = None
    cut_frequency: int = 500
    root_tol: float = 1e-9
    t_lower: float = TRIVIAL_T_LOWER
    audit_cuts: bool = False
    cut_collector: list | None = None   # receives every Cut added to the master


def master_model(milp: BlockMilp, t_lower: float = TRIVIAL_T_LOWER) -> LpModel:
    """Master LP over (x, t): min c'x + 1't s.t. D x >= h plus cut rows."""
    n_x, n_t = milp.n_x, milp.n_t
    rows = np.hstack([milp.D, np.zeros((milp.D.shape[0], n_t))]) if milp.D.size else np.zeros((0, n_x + n_t))
    return LpModel(
        c=np.concatenate([milp.c, np.ones(n_t)]),
        rows=rows,
        relations=[GE] * rows.shape[0],
        rhs=milp.h if milp.D.size else np.zeros(0),
        lower=np.concatenate([milp.lower, np.full(n_t, t_lower)]),
        upper=np.concatenate([milp.upper, np.full(n_t, np.inf)]),
    )


def extensive_model(milp: BlockMilp) -> LpModel:
    """The original (x, y) formulation for the EXT baseline."""
    n_x, n_y = milp.n_x, milp.n_y
    top = np.hstack([milp.A, milp.B])
    dd = np.hstack([milp.D, np.zeros((milp.D.shape[0], n_y))]) if milp.D.size else np.zeros((0, n_x + n_y))
    return LpModel(
        c=np.concatenate([milp.c, milp.d]),
        rows=np.vstack([top, dd]),
        relations=[GE] * (top.shape[0] + dd.shape[0]),
        rhs=np.concatenate([milp.b, milp.h if milp.D.size else np.zeros(0)]),
        lower=np.concatenate([milp.lower, np.full(n_y, -np.inf)]),
        upper=np.concatenate([milp.upper, np.full(n_y, np.inf)]),
    )


def _query_all(milp, oracle, x, t, viol_tol):
    """Oracle replies in deterministic scenario order."""
    replies = []
    for sc in milp.scenario_ids():
        t_val = t[sc] if sc is not None else t[0]
        replies.append((sc, oracle.query(x, t_val, scenario=sc, viol_tol=viol_tol)))
    return replies


def benders_seq(milp: BlockMilp, oracle, config: BendersConfig | None = None) -> bnb_mod.BnbResult:
    """Iterate master optima against the oracle until no violated cut remains."""
    config = config or BendersConfig()
    n_x, n_t = milp.n_x, milp.n_t
    master = master_model(milp, config.t_lower)
    cut_rows: list = []
    t0 = time.time()
    traj: list = []
    best_ub = np.inf
    best_x = None
    lb = -np.inf
    warm = None
    master_solves = 0
    for it in range(config.max_iters):
        model = master.with_rows(cut_rows) if cut_rows else master
        if config.master_integer:
            res = bnb_mod.solve_bnb(model, milp.integer,
                                    config=bnb_mod.BnbConfig(opt_gap=config.opt_gap))
            master_solves += 1
            if res.status == bnb_mod.STATUS_INFEASIBLE:
                return bnb_mod.BnbResult(status=bnb_mod.STATUS_INFEASIBLE, x=None,
                                         objective=np.inf, lower_bound=np.inf,
                                         node_count=master_solves, trajectory=traj)
            if res.x is None:  # hit a master limit without an incumbent
                break
            xt = res.x
            obj = res.objective
        else:
            out = solve_lp(model, warm_basis=None if warm is None else warm)
            master_solves += 1
            if out.status == INFEASIBLE:
                return bnb_mod.BnbResult(status=bnb_mod.STATUS_INFEASIBLE, x=None,
                                         objective=np.inf, lower_bound=np.inf,
                                         node_count=master_solves, trajectory=traj)
            if out.status == UNBOUNDED:
                raise InstanceShape("LP master unbounded despite trivial t bound")
            xt = out.x
            obj = out.objective
            warm = out.basis
        lb = max(lb, obj)
        x, t = xt[:n_x], xt[n_x:]
        replies = _query_all(milp, oracle, x, t, config.cut_viol_tol)
        values = [r.value for _, r in replies]
        if all(v is not None and np.isfinite(v) for v in values):
            cand = float(milp.c @ x) + float(np.sum(values))
            if cand < best_ub:
                best_ub, best_x = cand, xt.copy()
        traj.append((master_solves, lb, best_ub, time.time() - t0))
        violated = [(sc, r) for sc, r in replies if not r.inside]
        if not violated:
            objective = float(milp.c @ x) + float(np.sum(values))
            return bnb_mod.BnbResult(status=bnb_mod.STATUS_OPTIMAL, x=xt,
                                     objective=objective, lower_bound=lb,
                                     node_count=master_solves, trajectory=traj)
        for sc, r in violated:
            cut_rows.append(r.cut.row(n_x, n_t))
            if config.cut_collector is not None:
                config.cut_collector.append(r.cut)
        if config.time_limit is not None and time.time() - t0 > config.time_limit:
            break
    return bnb_mod.BnbResult(status=STATUS_ITER_LIMIT, x=best_x, objective=best_ub,
                             lower_bound=lb, node_count=master_solves, trajectory=traj)


def root_cut_loop(milp: BlockMilp, oracle, config: BendersConfig) -> tuple[list, float]:
    """Benders on the LP relaxation to root_tol; returns cut rows and the bound."""
    n_x, n_t = milp.n_x, milp.n_t
    master = master_model(milp, config.t_lower)
    rows: list = []
    warm = None
    bound = -np.inf
    for _ in range(config.max_iters):
        model = master.with_rows(rows) if rows else master
        out = solve_lp(model, warm_basis=warm)
        if out.status == INFEASIBLE:
            return rows, np.inf
        warm = out.basis
        bound = out.objective
        x, t = out.x[:n_x], out.x[n_x:]
        replies = _query_all(milp, oracle, x, t, config.root_tol)
        violated = [r for _, r in replies if not r.inside]
        if not violated:
            return rows, bound
        for r in violated:
            rows.append(r.cut.row(n_x, n_t))
            if config.cut_collector is not None:
                config.cut_collector.append(r.cut)
    return rows, bound


def benders_bnb(milp: BlockMilp, oracle, disjunctive_cb=None,
                config: BendersConfig | None = None) -> bnb_mod.BnbResult:
    """Single-tree Benders: lazy oracle cuts, optional disjunctive user cuts."""
    config = config or BendersConfig()
    n_x, n_t = milp.n_x, milp.n_t
    master = master_model(milp, config.t_lower)
    root_rows, _ = root_cut_loop(milp, oracle, config)
    base = master.with_rows(root_rows) if root_rows else master

    def lazy(x_full, node):
        x, t = x_full[:n_x], x_full[n_x:]
        replies = _query_all(milp, oracle, x, t, config.cut_viol_tol)
        violated = [r for _, r in replies if not r.inside]
        if violated:
            rows = []
            for r in violated:
                rows.append(r.cut.row(n_x, n_t))
                if config.cut_collector is not None:
                    config.cut_collector.append(r.cut)
            return bnb_mod.CallbackVerdict(accept=False, cuts=rows, tag="lazy")
        exact = float(milp.c @ x) + float(np.sum([r.value for _, r in replies]))
        return bnb_mod.CallbackVerdict(accept=True, exact_value=exact, tag="lazy")

    user = None
    if disjunctive_cb is not None:
        def user(x_full, node):
            x, t = x_full[:n_x], x_full[n_x:]
            cuts = disjunctive_cb(x, t, node)
            rows = []
            for cut in cuts:
                rows.append(cut.row(n_x, n_t))
                if config.cut_collector is not None:
                    config.cut_collector.append(cut)
            return bnb_mod.CallbackVerdict(accept=True, cuts=rows, tag="user")

    bcfg = bnb_mod.BnbConfig(opt_gap=config.opt_gap, time_limit=config.time_limit,
                             node_limit=config.node_limit,
                             user_cut_every=config.cut_frequency,
                             audit_cuts=config.audit_cuts)
    return bnb_mod.solve_bnb(base, milp.integer, lazy_cb=lazy, user_cb=user, config=bcfg)


def solve_extensive(milp: BlockMilp, config: BendersConfig | None = None) -> bnb_mod.BnbResult:
    """EXT baseline: branch and bound on the original formulation."""
    config = config or BendersConfig()
    model = extensive_model(milp)
    bcfg = bnb_mod.BnbConfig(opt_gap=config.opt_gap, time_limit=config.time_limit,
                             node_limit=config.node_limit)
    return bnb_mod.solve_bnb(model, milp.integer, config=bcfg)
