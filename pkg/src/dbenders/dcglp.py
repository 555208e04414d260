"""Disjunctive cut generation for the Benders reformulation.

Given a split (phi, phi0) inducing  phi'x <= phi0  v  phi'x >= phi0+1, the
deepest valid inequality gamma_x'x + gamma_t't >= gamma_0 for the convex
hull of the two-sided region is the dual of an l_p-norm projection problem
over two raised variable blocks kappa and nu:

    min tau
    s.t.  (kappa_x, kappa_t, kappa_0) in L#          (raised epigraph rows)
          (kappa_x, kappa_0) in X_LP#                (raised box/Dx>=h rows)
          phi'kappa_x >= (phi0+1) kappa_0            (sigma^1)
          ... same for nu with -phi'nu_x >= -phi0 nu_0 (sigma^2)
          kappa_0 + nu_0 = 1                         (gamma_0)
          s_x = kappa_x + nu_x - x_hat               (gamma_x)
          s_t = kappa_t + nu_t - t_hat               (gamma_t)
          tau >= ||(s_x, s_t)||_p

L# is known only through an oracle, so the relaxation R starts from a seed
(at least one optimality cut or a trivial lower bound on t per component)
and is refined by querying a typical Benders oracle at the de-homogenized
block points (omega_x/omega_0, omega_t/omega_0); every violated hyperplane
is raised into both blocks.  The dual values of the three linking row
groups read off the cut; intermediate duals are already valid cuts, so
early termination (gap or stall) is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dbenders.benders import BlockMilp, Cut, TRIVIAL_T_LOWER
from dbenders.lp import EQ, GE, INFEASIBLE, OPTIMAL, LpModel, extend_basis, solve_lp

INSIDE_HULL = "inside_hull"
CONVERGED = "converged"
GAP_REACHED = "gap_reached"
STALLED = "stalled"


class BadNorm(Exception):
    pass


class DcglpInfeasible(Exception):
    """The projection problem is infeasible, i.e. the instance itself is."""


@dataclass
class Split:
    """Integral (phi, phi0); support of phi must lie in the integer index set."""

    phi: np.ndarray
    phi0: int

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.phi0 = int(self.phi0)

    def validate(self, integer_indices):
        ints = set(integer_indices)
        for j, v in enumerate(self.phi):
            if abs(v - round(v)) > 1e-9:
                raise ValueError("phi must be integral")
            if abs(v) > 1e-9 and j not in ints:
                raise ValueError("phi supported outside the integer index set")


def simple_split(i: int, n_x: int, phi0: int = 0) -> Split:
    phi = np.zeros(n_x)
    phi[i] = 1.0
    return Split(phi=phi, phi0=phi0)


@dataclass
class DcglpConfig:
    p: object = "inf"              # l_p norm, p in {1, inf}
    eps_w0: float = 1e-6           # omega_0 threshold before de-homogenizing
    gap: float = 1e-3              # relative optimality gap termination
    stall_limit: int = 3           # non-improving iterations before stopping
    zero_tol: float = 1e-7         # tau below this means the point is inside
    cut_viol_tol: float = 1e-6
    max_iterations: int = 300
    keep_top: float = 1.0          # byproduct cut fraction, by violation
    record_history: bool = False
    t_lower: float = TRIVIAL_T_LOWER


def _norm_kind(p) -> str:
    if p in (1, "1"):
        return "l1"
    if p in ("inf", np.inf, math.inf):
        return "linf"
    raise BadNorm(f"p must be 1 or inf, got {p!r}")


@dataclass
class RaisedRowPair:
    """Raised form alpha_x'w_x + alpha_t'w_t - alpha_0 w_0 >= 0 for both blocks."""

    alpha_x: np.ndarray
    alpha_t: np.ndarray
    alpha_0: float


def raise_cut(cut: Cut, n_t: int = 1) -> RaisedRowPair:
    """Homogenize a valid inequality of L for use in the kappa and nu blocks."""
    return RaisedRowPair(alpha_x=np.asarray(cut.alpha_x, dtype=float),
                         alpha_t=cut.t_coefs(n_t), alpha_0=float(cut.alpha_0))


@dataclass
class DcglpDuals:
    gamma_0: float
    gamma_x: np.ndarray
    gamma_t: np.ndarray
    sigma1: float
    sigma2: float
    delta1: np.ndarray
    delta2: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    zeta1: dict = field(default_factory=dict)
    zeta2: dict = field(default_factory=dict)
    xi1: dict = field(default_factory=dict)
    xi2: dict = field(default_factory=dict)


@dataclass
class BlockPoint:
    x: np.ndarray
    t: np.ndarray
    w0: float


@dataclass
class DisjunctiveResult:
    tau: float
    cut: Cut
    byproduct_cuts: list
    iterations: int
    status: str
    kappa: BlockPoint
    nu: BlockPoint
    duals: DcglpDuals
    upper_bound: float
    history: list | None = None


class DcglpModel:
    """The evolving relaxation R with bookkeeping for dual extraction."""

    def __init__(self, milp: BlockMilp, split: Split, x_hat: np.ndarray,
                 t_hat: np.ndarray, p="inf", lift_sets=None, t_lower=TRIVIAL_T_LOWER):
        split.validate(milp.integer)
        self.norm = _norm_kind(p)
        self.n_x = milp.n_x
        self.n_t = t_hat.shape[0]
        self.split = split
        self.x_hat = np.asarray(x_hat, dtype=float)
        self.t_hat = np.asarray(t_hat, dtype=float)
        self.t_lower = t_lower
        self.lift_sets = lift_sets  # (I0, I1) or None
        n_x, n_t = self.n_x, self.n_t
        ns = n_x + n_t + 1                    # size of one block
        self.off_kappa = 0
        self.off_nu = ns
        self.off_s = 2 * ns                   # s_x then s_t
        self.off_tau = 2 * ns + n_x + n_t
        self.n_vars = self.off_tau + 1
        if self.norm == "l1":
            self.off_r = self.n_vars
            self.n_vars += n_x + n_t
        lower = np.full(self.n_vars, -np.inf)
        upper = np.full(self.n_vars, np.inf)
        lower[self.off_kappa + n_x + n_t] = 0.0   # kappa_0 >= 0
        lower[self.off_nu + n_x + n_t] = 0.0      # nu_0 >= 0
        if self.norm == "l1":
            lower[self.off_r:] = 0.0
        c = np.zeros(self.n_vars)
        c[self.off_tau] = 1.0
        rows, rels, rhs = [], [], []
        self.row_tags: list = []

        def add(coef, rel, b, tag):
            rows.append(coef)
            rels.append(rel)
            rhs.append(b)
            self.row_tags.append(tag)

        for block, off, sign_phi, rhs0 in (("kappa", self.off_kappa, 1.0, split.phi0 + 1),
                                           ("nu", self.off_nu, -1.0, -split.phi0)):
            w0 = off + n_x + n_t
            for r_i in range(milp.D.shape[0]):      # D w_x >= h w_0
                coef = np.zeros(self.n_vars)
                coef[off: off + n_x] = milp.D[r_i]
                coef[w0] = -milp.h[r_i]
                add(coef, GE, 0.0, ("theta", block, r_i))
            for j in range(n_x):                    # w_x >= l w_0
                coef = np.zeros(self.n_vars)
                coef[off + j] = 1.0
                coef[w0] = -milp.lower[j]
                add(coef, GE, 0.0, ("delta", block, j))
            for j in range(n_x):                    # u w_0 - w_x >= 0
                coef = np.zeros(self.n_vars)
                coef[off + j] = -1.0
                coef[w0] = milp.upper[j]
                add(coef, GE, 0.0, ("eta", block, j))
            coef = np.zeros(self.n_vars)            # split side
            coef[off: off + n_x] = sign_phi * split.phi
            coef[w0] = -rhs0
            add(coef, GE, 0.0, ("sigma", block))
            if lift_sets is not None:
                zero_set, one_set = lift_sets
                for j in sorted(zero_set):          # 0 >= w_x,j
                    coef = np.zeros(self.n_vars)
                    coef[off + j] = -1.0
                    add(coef, GE, 0.0, ("zeta", block, j))
                for j in sorted(one_set):           # w_x,j >= w_0
                    coef = np.zeros(self.n_vars)
                    coef[off + j] = 1.0
                    coef[w0] = -1.0
                    add(coef, GE, 0.0, ("xi", block, j))

        coef = np.zeros(self.n_vars)                # kappa_0 + nu_0 = 1
        coef[self.off_kappa + n_x + n_t] = 1.0
        coef[self.off_nu + n_x + n_t] = 1.0
        add(coef, EQ, 1.0, ("gamma0",))
        for j in range(n_x):                        # kappa_x + nu_x - s_x = x_hat
            coef = np.zeros(self.n_vars)
            coef[self.off_kappa + j] = 1.0
            coef[self.off_nu + j] = 1.0
            coef[self.off_s + j] = -1.0
            add(coef, EQ, float(self.x_hat[j]), ("gammax", j))
        for j in range(n_t):                        # kappa_t + nu_t - s_t = t_hat
            coef = np.zeros(self.n_vars)
            coef[self.off_kappa + n_x + j] = 1.0
            coef[self.off_nu + n_x + j] = 1.0
            coef[self.off_s + n_x + j] = -1.0
            add(coef, EQ, float(self.t_hat[j]), ("gammat", j))
        for j in range(n_x + n_t):                  # norm linearization
            if self.norm == "linf":
                coef = np.zeros(self.n_vars)
                coef[self.off_tau] = 1.0
                coef[self.off_s + j] = -1.0
                add(coef, GE, 0.0, ("norm+", j))
                coef = np.zeros(self.n_vars)
                coef[self.off_tau] = 1.0
                coef[self.off_s + j] = 1.0
                add(coef, GE, 0.0, ("norm-", j))
            else:
                coef = np.zeros(self.n_vars)
                coef[self.off_r + j] = 1.0
                coef[self.off_s + j] = -1.0
                add(coef, GE, 0.0, ("norm+", j))
                coef = np.zeros(self.n_vars)
                coef[self.off_r + j] = 1.0
                coef[self.off_s + j] = 1.0
                add(coef, GE, 0.0, ("norm-", j))
        if self.norm == "l1":
            coef = np.zeros(self.n_vars)
            coef[self.off_tau] = 1.0
            coef[self.off_r: self.off_r + n_x + n_t] = -1.0
            add(coef, GE, 0.0, ("norm_sum",))

        self.lp = LpModel(c=c, rows=np.array(rows), relations=rels,
                          rhs=np.array(rhs), lower=lower, upper=upper)
        self.pool_count = 0
        self._pool_keys = set()

    def add_raised(self, cut: Cut) -> bool:
        """Append the raised twin rows of a valid inequality to both blocks."""
        raised = raise_cut(cut, self.n_t)
        key = (cut.scenario, round(raised.alpha_0, 12),
               tuple(np.round(raised.alpha_x, 12)), tuple(np.round(raised.alpha_t, 12)))
        if key in self._pool_keys:
            return False
        self._pool_keys.add(key)
        new_rows = []
        n_x, n_t = self.n_x, self.n_t
        for block, off in (("kappa", self.off_kappa), ("nu", self.off_nu)):
            coef = np.zeros(self.n_vars)
            coef[off: off + n_x] = raised.alpha_x
            coef[off + n_x: off + n_x + n_t] = raised.alpha_t
            coef[off + n_x + n_t] = -raised.alpha_0
            new_rows.append((coef, GE, 0.0))
            self.row_tags.append(("pool", block, self.pool_count))
        self.lp = self.lp.with_rows(new_rows)
        self.pool_count += 1
        return True

    def solve(self, warm=None):
        basis = None
        if warm is not None and warm.basis is not None:
            extra = self.lp.n_rows - warm.basis[0].shape[0]
            basis = extend_basis(warm.basis, extra) if extra > 0 else warm.basis
        return solve_lp(self.lp, warm_basis=basis)

    def block_point(self, out, block: str) -> BlockPoint:
        off = self.off_kappa if block == "kappa" else self.off_nu
        n_x, n_t = self.n_x, self.n_t
        return BlockPoint(x=out.x[off: off + n_x].copy(),
                          t=out.x[off + n_x: off + n_x + n_t].copy(),
                          w0=float(out.x[off + n_x + n_t]))

    def extract_duals(self, out) -> DcglpDuals:
        y = out.duals
        n_x, n_t = self.n_x, self.n_t
        g0 = 0.0
        gx = np.zeros(n_x)
        gt = np.zeros(n_t)
        sigma = {"kappa": 0.0, "nu": 0.0}
        delta = {"kappa": np.zeros(n_x), "nu": np.zeros(n_x)}
        eta = {"kappa": np.zeros(n_x), "nu": np.zeros(n_x)}
        theta = {"kappa": [], "nu": []}
        zeta = {"kappa": {}, "nu": {}}
        xi = {"kappa": {}, "nu": {}}
        for i, tag in enumerate(self.row_tags):
            kind = tag[0]
            if kind == "gamma0":
                g0 = y[i]
            elif kind == "gammax":
                gx[tag[1]] = y[i]
            elif kind == "gammat":
                gt[tag[1]] = y[i]
            elif kind == "sigma":
                sigma[tag[1]] = y[i]
            elif kind == "delta":
                delta[tag[1]][tag[2]] = y[i]
            elif kind == "eta":
                eta[tag[1]][tag[2]] = y[i]
            elif kind == "theta":
                theta[tag[1]].append(y[i])
            elif kind == "zeta":
                zeta[tag[1]][tag[2]] = y[i]
            elif kind == "xi":
                xi[tag[1]][tag[2]] = y[i]
        # duality: tau = g0 + gx'x_hat + gt't_hat, while the cut reads
        # gamma_0 - gamma_x'x - gamma_t't <= 0, so gamma flips the link signs
        return DcglpDuals(
            gamma_0=float(g0), gamma_x=-gx, gamma_t=-gt,
            sigma1=float(sigma["kappa"]), sigma2=float(sigma["nu"]),
            delta1=delta["kappa"], delta2=delta["nu"],
            eta1=eta["kappa"], eta2=eta["nu"],
            theta1=np.array(theta["kappa"]), theta2=np.array(theta["nu"]),
            zeta1=zeta["kappa"], zeta2=zeta["nu"],
            xi1=xi["kappa"], xi2=xi["nu"],
        )


def build_dcglp(milp: BlockMilp, split: Split, point, seed_cuts=(),
                prev_disjunctive=(), p="inf", lift_sets=None,
                t_lower=TRIVIAL_T_LOWER) -> DcglpModel:
    """Assemble R for a split and separation point, seeding the L-relaxation.

    Every t component missing an optimality-style seed (alpha_t > 0) gets the
    trivial bound t_j >= t_lower so the raised blocks stay well-posed at
    omega_0 = 0.
    """
    x_hat, t_hat = point
    t_hat = np.atleast_1d(np.asarray(t_hat, dtype=float))
    model = DcglpModel(milp, split, np.asarray(x_hat, dtype=float), t_hat,
                       p=p, lift_sets=lift_sets, t_lower=t_lower)
    covered = set()
    for cut in seed_cuts:
        coefs = cut.t_coefs(model.n_t)
        for j in range(model.n_t):
            if coefs[j] > 1e-12:
                covered.add(j)
    for j in range(model.n_t):
        if j not in covered:
            sc = j if model.n_t > 1 else None
            model.add_raised(Cut(alpha_x=np.zeros(model.n_x), alpha_t=1.0,
                                 alpha_0=t_lower, kind="optimality", scenario=sc))
    for cut in seed_cuts:
        model.add_raised(cut)
    for cut in prev_disjunctive:
        model.add_raised(cut)
    return model


@dataclass
class OracleState:
    """Inputs of the Remark-2 upper-bound update after one R solve."""

    s_x: np.ndarray
    t_hat: np.ndarray
    kappa: BlockPoint
    nu: BlockPoint
    inside: dict                  # (block, scenario index) -> bool
    norm: str
    upper_bound: float


def upper_bound_update(state: OracleState, f_values: dict) -> float:
    """New UB from modified block t-values; +inf candidates leave UB alone.

    For each block with omega_0 above threshold and the oracle outside L#,
    omega_t is replaced by omega_0 * f(omega_x/omega_0), making the pair
    feasible for the exact projection problem.
    """
    mods = {}
    for name, bp in (("kappa", state.kappa), ("nu", state.nu)):
        wt = bp.t.copy()
        for j in range(wt.shape[0]):
            if state.inside.get((name, j), True):
                continue
            f = f_values.get((name, j))
            if f is None or not np.isfinite(f):
                return state.upper_bound
            wt[j] = bp.w0 * f
        mods[name] = wt
    resid = np.concatenate([state.s_x, mods["kappa"] + mods["nu"] - state.t_hat])
    cand = float(np.max(np.abs(resid))) if state.norm == "linf" else float(np.sum(np.abs(resid)))
    return min(state.upper_bound, cand)


def _gamma_cut(duals: DcglpDuals, n_t: int) -> Cut:
    alpha_t = duals.gamma_t if n_t > 1 else float(duals.gamma_t[0])
    return Cut(alpha_x=duals.gamma_x.copy(), alpha_t=alpha_t,
               alpha_0=duals.gamma_0, kind="disjunctive")


def _run_oracle(milp: BlockMilp, split: Split, x_hat, t_hat, oracle,
                config: DcglpConfig, lift_sets=None, seed_cuts=(),
                prev_disjunctive=()) -> DisjunctiveResult:
    x_hat = np.asarray(x_hat, dtype=float)
    t_hat = np.atleast_1d(np.asarray(t_hat, dtype=float))
    n_t = t_hat.shape[0]
    scenario_ids = milp.scenario_ids() if n_t > 1 else [None]
    model = build_dcglp(milp, split, (x_hat, t_hat), seed_cuts=seed_cuts,
                        prev_disjunctive=prev_disjunctive, p=config.p,
                        lift_sets=lift_sets, t_lower=config.t_lower)
    ub = np.inf
    stall = 0
    tau_prev = -np.inf
    byproducts: list[tuple[float, Cut]] = []
    history = [] if config.record_history else None
    out = None
    status = STALLED
    iterations = 0
    for _ in range(config.max_iterations):
        out = model.solve(warm=out)
        if out.status == INFEASIBLE:
            raise DcglpInfeasible("relaxation R infeasible: the instance has no feasible point")
        if out.status != OPTIMAL:
            raise DcglpInfeasible(f"unexpected LP status {out.status}")
        iterations += 1
        tau = out.objective
        kappa = model.block_point(out, "kappa")
        nu = model.block_point(out, "nu")
        inside = {}
        f_vals = {}
        new_cuts = []
        for name, bp in (("kappa", kappa), ("nu", nu)):
            if bp.w0 > config.eps_w0:
                x_prime = bp.x / bp.w0
                for idx, sc in enumerate(scenario_ids):
                    t_prime = bp.t[idx] / bp.w0
                    reply = oracle.query(x_prime, t_prime, scenario=sc,
                                         viol_tol=config.cut_viol_tol)
                    inside[(name, idx)] = reply.inside
                    f_vals[(name, idx)] = reply.value
                    if not reply.inside:
                        viol = float(reply.cut.alpha_0 - reply.cut.alpha_x @ x_prime
                                     - reply.cut.alpha_t * t_prime)
                        new_cuts.append((name, idx, reply.cut))
                        byproducts.append((viol, reply.cut))
            else:
                for idx in range(n_t):
                    inside[(name, idx)] = True
        s_x = np.asarray(kappa.x + nu.x - x_hat)
        state = OracleState(s_x=s_x, t_hat=t_hat, kappa=kappa, nu=nu,
                            inside=inside, norm=model.norm, upper_bound=ub)
        ub = upper_bound_update(state, f_vals)
        if history is not None:
            history.append((tau, _gamma_cut(model.extract_duals(out), n_t)))
        if all(inside.values()):
            status = CONVERGED
            break
        if np.isfinite(ub) and ub - tau <= config.gap * max(abs(ub), 1e-10):
            status = GAP_REACHED
            break
        if tau > tau_prev + 1e-9 * (1.0 + abs(tau_prev)):
            stall = 0
        else:
            stall += 1
        tau_prev = tau
        if stall >= config.stall_limit:
            status = STALLED
            break
        for name, idx, cut in sorted(new_cuts, key=lambda c: (c[0], -1 if c[1] is None else c[1])):
            model.add_raised(cut)
    duals = model.extract_duals(out)
    tau = out.objective
    if tau <= config.zero_tol:
        status = INSIDE_HULL
    kept = _filter_byproducts(byproducts, config.keep_top)
    return DisjunctiveResult(
        tau=float(tau), cut=_gamma_cut(duals, n_t), byproduct_cuts=kept,
        iterations=iterations, status=status,
        kappa=model.block_point(out, "kappa"), nu=model.block_point(out, "nu"),
        duals=duals, upper_bound=float(ub), history=history,
    )


def _filter_byproducts(tagged: list, keep_top: float) -> list:
    """Deduplicate, rank by violation at the query point, keep the top slice."""
    seen = {}
    for viol, cut in tagged:
        key = (cut.scenario, round(float(cut.alpha_0), 10),
               tuple(np.round(cut.alpha_x, 10)),
               tuple(np.atleast_1d(np.round(np.asarray(cut.alpha_t, dtype=float), 10))))
        if key not in seen or viol > seen[key][0]:
            seen[key] = (viol, cut)
    ranked = sorted(seen.values(), key=lambda vc: -vc[0])
    keep = int(math.ceil(keep_top * len(ranked)))
    return [cut for _, cut in ranked[:keep]]


def the_oracle(milp: BlockMilp, split: Split, point, typical_oracle,
               config: DcglpConfig | None = None, seed_cuts=(),
               prev_disjunctive=()) -> DisjunctiveResult:
    """Routine-1 separation of (x_hat, t_hat) from conv(P^(phi,phi0))."""
    config = config or DcglpConfig()
    x_hat, t_hat = point
    return _run_oracle(milp, split, x_hat, np.atleast_1d(t_hat)[:1], typical_oracle,
                       config, seed_cuts=seed_cuts, prev_disjunctive=prev_disjunctive)


def the_oracle_separable(milp: BlockMilp, split: Split, point, typical_oracle,
                         config: DcglpConfig | None = None, seed_cuts=(),
                         prev_disjunctive=()) -> DisjunctiveResult:
    """Routine-2 variant: per-scenario epigraphs, t_hat has one entry per block."""
    config = config or DcglpConfig()
    if not milp.scenarios:
        raise BadNorm("separable oracle requires a scenario partition")
    x_hat, t_hat = point
    t_hat = np.atleast_1d(np.asarray(t_hat, dtype=float))
    if t_hat.shape[0] != len(milp.scenarios):
        raise ValueError("t_hat must carry one component per scenario block")
    return _run_oracle(milp, split, x_hat, t_hat, typical_oracle, config,
                       seed_cuts=seed_cuts, prev_disjunctive=prev_disjunctive)
