"""Bounded-variable revised simplex with duals, Farkas and unbounded rays.

Solves   min c'x  s.t.  a_i'x {>=, <=, =} b_i,  l <= x <= u   (entries of
l, u may be infinite).  Internally every row gets a slack column so the
system becomes  A x + s = b  with bounds on both structural variables and
slacks; a composite (artificial-free) phase 1 minimizes the total bound
violation of the basic variables, which also makes warm starts from an
arbitrary basis uniform with cold starts.

Besides the optimal primal/dual pair the solver produces
  * a Farkas certificate of infeasibility: row multipliers y (>= 0 on >=
    rows, <= 0 on <= rows, free on = rows) such that the aggregated row
    cannot be satisfied within the variable box, and
  * a primal ray on unboundedness (feasible direction with c'ray < 0).

Pivoting is Dantzig pricing with lowest-index tie-breaks; after a
configurable number of non-improving pivots Bland's rule takes over, which
guarantees termination.  All choices are deterministic, so repeated solves
of the same model give bit-identical answers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GE = ">="
LE = "<="
EQ = "="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-10
BLAND_AFTER = 200
REFACTOR_EVERY = 120

# nonbasic/basic state codes
_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2
_FREE = 3  # nonbasic free variable parked at zero


class NumericalFailure(Exception):
    """Basis factorization degraded beyond recovery tolerance."""


@dataclass
class LpModel:
    """min c'x subject to rows (coef, relation, rhs) and box bounds."""

    c: np.ndarray
    rows: np.ndarray          # (m, n) coefficient matrix
    relations: list[str]      # one of GE, LE, EQ per row
    rhs: np.ndarray
    lower: np.ndarray         # -inf allowed
    upper: np.ndarray         # +inf allowed

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.rows.shape[0] != len(self.relations) or self.rows.shape[0] != self.rhs.shape[0]:
            raise ValueError("row/relation/rhs length mismatch")
        if self.lower.shape[0] != n or self.upper.shape[0] != n:
            raise ValueError("bound length mismatch")
        if np.any(self.lower > self.upper + 1e-12):
            raise ValueError("lower bound exceeds upper bound")
        bad = set(self.relations) - {GE, LE, EQ}
        if bad:
            raise ValueError(f"unknown relations {bad}")

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def with_rows(self, new_rows) -> "LpModel":
        """Model with extra (coef, relation, rhs) rows appended."""
        coefs = [np.asarray(r[0], dtype=float) for r in new_rows]
        rels = [r[1] for r in new_rows]
        rhss = [float(r[2]) for r in new_rows]
        rows = np.vstack([self.rows] + [c.reshape(1, -1) for c in coefs]) if coefs else self.rows
        return LpModel(
            c=self.c,
            rows=rows,
            relations=list(self.relations) + rels,
            rhs=np.concatenate([self.rhs, np.asarray(rhss)]),
            lower=self.lower,
            upper=self.upper,
        )

    def with_bounds(self, lower, upper) -> "LpModel":
        return LpModel(c=self.c, rows=self.rows, relations=list(self.relations),
                       rhs=self.rhs, lower=np.asarray(lower, dtype=float),
                       upper=np.asarray(upper, dtype=float))


@dataclass
class LpOutcome:
    """Result of an LP solve; exactly one of the status-specific payloads is set."""

    status: str
    x: np.ndarray | None = None
    duals: np.ndarray | None = None           # one per row; >=0 on GE, <=0 on LE
    reduced_costs: np.ndarray | None = None
    objective: float | None = None
    farkas_ray: np.ndarray | None = None      # row multipliers, unit l1 norm
    primal_ray: np.ndarray | None = None
    basis: tuple | None = None                # (basis indices, column states) for warm starts
    iterations: int = 0


class _Simplex:
    """Mutable simplex state over the slack-augmented system A x + s = b."""

    def __init__(self, model: LpModel):
        m, n = model.n_rows, model.n_vars
        self.m = m
        self.n_struct = n
        self.ntot = n + m
        self.A = np.hstack([model.rows, np.eye(m)]) if m else model.rows.reshape(0, n)
        self.b = model.rhs.copy()
        self.cost = np.concatenate([model.c, np.zeros(m)])
        slo = np.zeros(m)
        sup = np.zeros(m)
        for i, rel in enumerate(model.relations):
            if rel == GE:
                slo[i], sup[i] = -np.inf, 0.0
            elif rel == LE:
                slo[i], sup[i] = 0.0, np.inf
        self.lb = np.concatenate([model.lower, slo])
        self.ub = np.concatenate([model.upper, sup])
        self.movable = self.ub - self.lb > PIVOT_TOL
        self.pivots = 0
        self.since_refactor = 0
        # set by _init_state
        self.basis = None
        self.state = None
        self.binv = None
        self.xb = None
        self.val = None     # values of nonbasic columns (garbage at basic slots)
        self.lb_b = None    # lb/ub gathered at basis positions
        self.ub_b = None

    # -- state management -------------------------------------------------

    def init_state(self, warm_basis: tuple | None):
        if warm_basis is not None:
            basis, state = warm_basis
            basis = np.asarray(basis, dtype=int)
            state = np.asarray(state, dtype=np.int8).copy()
            if (basis.shape[0] == self.m and state.shape[0] == self.ntot
                    and len(set(basis.tolist())) == self.m):
                self.basis = basis.copy()
                self.state = state
                finite_lb = np.isfinite(self.lb)
                finite_ub = np.isfinite(self.ub)
                fix = (state == _AT_LOWER) & ~finite_lb
                state[fix] = np.where(finite_ub[fix], _AT_UPPER, _FREE)
                fix = (state == _AT_UPPER) & ~finite_ub
                state[fix] = np.where(finite_lb[fix], _AT_LOWER, _FREE)
                fix = (state == _FREE) & finite_lb
                state[fix] = _AT_LOWER
                try:
                    self._after_basis_change()
                    return
                except NumericalFailure:
                    pass  # fall through to cold start
        self.state = np.empty(self.ntot, dtype=np.int8)
        sl = self.lb[: self.n_struct]
        su = self.ub[: self.n_struct]
        self.state[: self.n_struct] = np.where(
            np.isfinite(sl), _AT_LOWER, np.where(np.isfinite(su), _AT_UPPER, _FREE))
        self.state[self.n_struct:] = _BASIC
        self.basis = np.arange(self.n_struct, self.ntot)
        self._after_basis_change()

    def _after_basis_change(self):
        B = self.A[:, self.basis]
        try:
            self.binv = np.linalg.inv(B) if self.m else np.zeros((0, 0))
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis") from exc
        if not np.all(np.isfinite(self.binv)):
            raise NumericalFailure("non-finite basis inverse")
        self._refresh_values()
        self.since_refactor = 0

    def _refresh_values(self):
        v = np.zeros(self.ntot)
        at_lo = self.state == _AT_LOWER
        at_up = self.state == _AT_UPPER
        v[at_lo] = self.lb[at_lo]
        v[at_up] = self.ub[at_up]
        self.val = v
        nb = self.state != _BASIC
        resid = self.b - self.A[:, nb] @ v[nb]
        self.xb = self.binv @ resid
        self.lb_b = self.lb[self.basis]
        self.ub_b = self.ub[self.basis]

    def refactor(self):
        self._after_basis_change()

    def full_solution(self) -> np.ndarray:
        v = self.val.copy()
        v[self.basis] = self.xb
        return v

    # -- pivoting ----------------------------------------------------------

    def price(self, d: np.ndarray, bland: bool):
        """Entering column and direction, or None when no attractive column."""
        st = self.state
        cand_up = (((st == _AT_LOWER) & self.movable) | (st == _FREE)) & (d < -OPT_TOL)
        cand_dn = (((st == _AT_UPPER) & self.movable) | (st == _FREE)) & (d > OPT_TOL)
        any_cand = cand_up | cand_dn
        if not any_cand.any():
            return None
        if bland:
            j = int(np.argmax(any_cand))
        else:
            score = np.where(any_cand, np.abs(d), -1.0)
            j = int(np.argmax(score))
        return j, (+1 if cand_up[j] else -1)

    def ratio_test(self, enter: int, direction: int, alpha: np.ndarray, phase1: bool):
        """Max step, blocking basis position (None: flip/unbounded), hit bound.

        Basic k moves by -direction*alpha_k per unit step; a bound blocks only
        when it lies ahead of the motion.  In phase 1 an infeasible basic
        blocks at the bound it crosses on the way into feasibility (a
        slope-change point of the infeasibility objective); one moving deeper
        into infeasibility never blocks - its worsening rate is already priced
        into the reduced cost.
        """
        deltas = -direction * alpha
        lo, up, xb = self.lb_b, self.ub_b, self.xb
        bounds = np.full(self.m, np.nan)
        hits = np.zeros(self.m, dtype=np.int8)

        moving_up = deltas > PIVOT_TOL
        if moving_up.any():
            below = xb < lo - FEAS_TOL
            if phase1:
                sel = moving_up & below
                bounds[sel] = lo[sel]
            sel = moving_up & ~below & np.isfinite(up) & (xb <= up + FEAS_TOL)
            bounds[sel] = up[sel]
            hits[sel] = _AT_UPPER

        moving_dn = deltas < -PIVOT_TOL
        if moving_dn.any():
            above = xb > up + FEAS_TOL
            if phase1:
                sel = moving_dn & above
                bounds[sel] = up[sel]
                hits[sel] = _AT_UPPER
            sel = moving_dn & ~above & np.isfinite(lo) & (xb >= lo - FEAS_TOL)
            bounds[sel] = lo[sel]

        safe = np.where(np.abs(deltas) < PIVOT_TOL, 1.0, deltas)
        with np.errstate(invalid="ignore"):
            ratios = np.maximum((bounds - xb) / safe, 0.0)
        ratios[np.isnan(bounds)] = np.inf
        best_t = float(ratios.min()) if self.m else np.inf
        span = self.ub[enter] - self.lb[enter]
        if np.isfinite(span) and self.state[enter] != _FREE and span < best_t:
            return float(span), None, _AT_LOWER
        if not np.isfinite(best_t):
            return best_t, None, _AT_LOWER
        cand = np.flatnonzero(ratios <= best_t + 1e-12)
        pos = int(cand[np.argmin(self.basis[cand])])  # lowest variable id wins ties
        return best_t, pos, int(hits[pos])

    def apply_step(self, enter: int, direction: int, alpha: np.ndarray,
                   t: float, leave_pos: int | None, leave_bound: int):
        self.xb -= direction * t * alpha
        if leave_pos is None:  # bound flip
            new_state = _AT_UPPER if self.state[enter] == _AT_LOWER else _AT_LOWER
            self.state[enter] = new_state
            self.val[enter] = self.ub[enter] if new_state == _AT_UPPER else self.lb[enter]
            return
        leave = self.basis[leave_pos]
        enter_val = self.val[enter] + direction * t
        self.state[leave] = leave_bound  # parks exactly at the bound that blocked
        self.val[leave] = self.lb[leave] if leave_bound == _AT_LOWER else self.ub[leave]
        piv = alpha[leave_pos]
        if abs(piv) < PIVOT_TOL:
            raise NumericalFailure("pivot element below tolerance")
        self.binv[leave_pos, :] /= piv
        scale = alpha.copy()
        scale[leave_pos] = 0.0
        self.binv -= np.outer(scale, self.binv[leave_pos, :])
        self.basis[leave_pos] = enter
        self.state[enter] = _BASIC
        self.xb[leave_pos] = enter_val
        self.lb_b[leave_pos] = self.lb[enter]
        self.ub_b[leave_pos] = self.ub[enter]
        self.pivots += 1
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()
        elif t > 1e30:
            # a step this long came off a huge artificial bound (e.g. the
            # trivial t >= -1e99 row); incremental values lost all small
            # structure to absorption, so rebuild them from the factorization
            self._refresh_values()

    # -- phases ------------------------------------------------------------

    def infeasibility(self):
        w = np.zeros(self.m)
        below = self.xb < self.lb_b - FEAS_TOL
        above = self.xb > self.ub_b + FEAS_TOL
        if not (below.any() or above.any()):
            return None, 0.0
        w[below] = -1.0
        w[above] = 1.0
        total = float(np.sum((self.lb_b - self.xb)[below]) + np.sum((self.xb - self.ub_b)[above]))
        return w, total

    def phase1(self, max_pivots: int) -> np.ndarray | None:
        """Drive basics inside their bounds; Farkas multipliers on failure."""
        stall = 0
        prev_total = np.inf
        while True:
            w, total = self.infeasibility()
            if w is None:
                np.clip(self.xb, np.where(np.isfinite(self.lb_b), self.lb_b, -np.inf),
                        np.where(np.isfinite(self.ub_b), self.ub_b, np.inf), out=self.xb)
                return None
            stall = 0 if total < prev_total - 1e-12 else stall + 1
            prev_total = total
            y = w @ self.binv
            d = -(y @ self.A)
            picked = self.price(d, bland=stall > BLAND_AFTER)
            if picked is None:
                return y  # infeasible; y certifies it
            enter, direction = picked
            alpha = self.binv @ self.A[:, enter]
            t, leave_pos, leave_bound = self.ratio_test(enter, direction, alpha, phase1=True)
            if not np.isfinite(t):
                raise NumericalFailure("phase-1 step unbounded")
            self.apply_step(enter, direction, alpha, t, leave_pos, leave_bound)
            if self.pivots > max_pivots:
                raise NumericalFailure("phase-1 pivot limit exceeded")

    def phase2(self, max_pivots: int):
        """Optimize; returns ('optimal', y, d) or ('unbounded', ray, None)."""
        stall = 0
        obj = float(self.cost @ self.full_solution())
        while True:
            y = self.cost[self.basis] @ self.binv
            d = self.cost - y @ self.A
            picked = self.price(d, bland=stall > BLAND_AFTER)
            if picked is None:
                return "optimal", y, d
            enter, direction = picked
            alpha = self.binv @ self.A[:, enter]
            t, leave_pos, leave_bound = self.ratio_test(enter, direction, alpha, phase1=False)
            if not np.isfinite(t):
                ray = np.zeros(self.ntot)
                ray[enter] = direction
                ray[self.basis] = -direction * alpha
                return "unbounded", ray, None
            self.apply_step(enter, direction, alpha, t, leave_pos, leave_bound)
            gain = d[enter] * direction * t  # negative when the step improved
            stall = 0 if gain < -1e-12 * (1.0 + abs(obj)) else stall + 1
            obj += gain
            if self.pivots > max_pivots:
                raise NumericalFailure("phase-2 pivot limit exceeded")


def solve_lp(model: LpModel, warm_basis: tuple | None = None,
             max_pivots: int = 200_000) -> LpOutcome:
    """Solve the LP; deterministic for identical input and warm basis."""
    sx = _Simplex(model)
    sx.init_state(warm_basis)
    farkas = sx.phase1(max_pivots)
    if farkas is not None:
        ray = farkas[: sx.m].copy()
        norm = np.sum(np.abs(ray))
        if norm > 0:
            ray /= norm
        return LpOutcome(status=INFEASIBLE, farkas_ray=ray, iterations=sx.pivots)
    verdict = sx.phase2(max_pivots)
    if verdict[0] == "unbounded":
        ray = verdict[1][: sx.n_struct]
        scale = np.max(np.abs(ray))
        if scale > 0:
            ray = ray / scale
        return LpOutcome(status=UNBOUNDED, primal_ray=ray, iterations=sx.pivots)
    _, y, d = verdict
    full = sx.full_solution()
    x = full[: sx.n_struct]
    return LpOutcome(
        status=OPTIMAL,
        x=x,
        duals=y[: sx.m].copy(),
        reduced_costs=d[: sx.n_struct].copy(),
        objective=float(model.c @ x),
        basis=(sx.basis.copy(), sx.state.copy()),
        iterations=sx.pivots,
    )


def add_rows_and_resolve(model: LpModel, new_rows, warm: LpOutcome | None) -> LpOutcome:
    """Append rows and re-solve, warm-starting from a previous outcome.

    The warm start is an optimization only: statuses and objectives match a
    cold solve within tolerances.
    """
    bigger = model.with_rows(new_rows)
    warm_basis = None
    if warm is not None and warm.basis is not None:
        warm_basis = extend_basis(warm.basis, len(new_rows))
    return solve_lp(bigger, warm_basis=warm_basis)


def extend_basis(basis: tuple, k_new_rows: int) -> tuple:
    """Warm-start basis for a model with k extra rows: new slacks enter basic."""
    b, state = basis
    n_old_tot = state.shape[0]
    new_state = np.concatenate([state, np.full(k_new_rows, _BASIC, dtype=np.int8)])
    new_basis = np.concatenate([b, np.arange(n_old_tot, n_old_tot + k_new_rows)])
    return new_basis, new_state


def verify_farkas(model: LpModel, ray: np.ndarray, tol: float = 1e-7) -> bool:
    """Check that ray certifies infeasibility against rows plus bounds."""
    g = ray @ model.rows
    agg_rhs = float(ray @ model.rhs)
    # slack orientation: GE rows need ray>=0, LE rows ray<=0
    for i, rel in enumerate(model.relations):
        if rel == GE and ray[i] < -tol:
            return False
        if rel == LE and ray[i] > tol:
            return False
    box_max = 0.0
    for j in range(model.n_vars):
        if g[j] > tol:
            if not np.isfinite(model.upper[j]):
                return False
            box_max += g[j] * model.upper[j]
        elif g[j] < -tol:
            if not np.isfinite(model.lower[j]):
                return False
            box_max += g[j] * model.lower[j]
    return agg_rhs - box_max > tol
