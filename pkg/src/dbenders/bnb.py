"""Deterministic branch and bound over LP relaxations with cut callbacks.

Best-bound node selection (ties by lowest node id), most-fractional
branching (ties by lowest variable index), up-branch explored first.  Two
callback hooks mirror solver callback semantics:

  * lazy_cb fires at integral candidates and may reject them by supplying
    violated cuts (added globally, node re-solved);
  * user_cb fires at fractional nodes on a configurable cadence and may add
    globally valid cuts.

Node LPs re-solve warm from the parent basis; cut rows are appended to a
single shared row pool so bases stay valid prefixes.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from dbenders.lp import (
    INFEASIBLE,
    OPTIMAL,
    LpModel,
    LpOutcome,
    extend_basis,
    solve_lp,
)

OPEN = "open"
FATHOMED = "fathomed"
BRANCHED = "branched"

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_TIME_LIMIT = "time_limit"
STATUS_NODE_LIMIT = "node_limit"


class UnknownNode(Exception):
    pass


class CutRejected(Exception):
    """Audit mode: a callback cut removed a previously accepted incumbent."""


@dataclass
class BnbConfig:
    int_tol: float = 1e-9
    opt_gap: float = 1e-6          # relative gap termination, CPX_PARAM_EPGAP style
    time_limit: float | None = None
    node_limit: int | None = None
    user_cut_every: int = 500      # fractional-node cadence for user_cb
    audit_cuts: bool = False
    keep_tree: bool = False
    max_lazy_rounds: int = 10_000


@dataclass
class BnbNode:
    node_id: int
    depth: int
    fixings: dict[int, tuple[float, float]]  # var -> (lb, ub) override
    parent_bound: float
    status: str = OPEN
    basis: tuple | None = None
    rows_at_basis: int = 0


@dataclass
class CallbackVerdict:
    accept: bool = True
    cuts: list = field(default_factory=list)   # (coef over all vars, relation, rhs)
    tag: str = "lazy"
    exact_value: float | None = None           # true objective of the candidate


@dataclass
class BnbResult:
    status: str
    x: np.ndarray | None
    objective: float
    lower_bound: float
    node_count: int
    trajectory: list[tuple[int, float, float, float]]
    tree: dict | None = None

    def node(self, node_id: int) -> BnbNode:
        if self.tree is None or node_id not in self.tree:
            raise UnknownNode(node_id)
        return self.tree[node_id]


def node_fixings(node: BnbNode, integer_indices=None) -> tuple[set[int], set[int]]:
    """Binary index sets fixed to 0 / 1 along the path from the root."""
    zeros, ones = set(), set()
    for j, (lo, up) in node.fixings.items():
        if integer_indices is not None and j not in integer_indices:
            continue
        if up <= 1e-9:
            zeros.add(j)
        elif lo >= 1.0 - 1e-9:
            ones.add(j)
    return zeros, ones


def most_fractional(x: np.ndarray, integer_indices, int_tol: float) -> int | None:
    """Branching variable: largest distance to the nearest integer, lowest index."""
    best_j, best_f = None, int_tol
    for j in integer_indices:
        f = abs(x[j] - round(x[j]))
        if f > best_f + 1e-12:
            best_j, best_f = j, f
    return best_j


def _is_integral(x, integer_indices, int_tol):
    return all(abs(x[j] - round(x[j])) <= int_tol for j in integer_indices)


class _Tree:
    def __init__(self, model: LpModel, integer_indices, config: BnbConfig):
        self.base = model
        self.integer = list(integer_indices)
        self.config = config
        self.cut_rows: list = []          # shared pool of (coef, rel, rhs)
        self.nodes: dict[int, BnbNode] = {}
        self.next_id = 0
        self.heap: list = []
        self.incumbent_x = None
        self.incumbent_obj = np.inf
        self.accepted: list = []          # audit store
        self.node_count = 0
        self.frac_count = 0
        self.traj: list = []
        self.t0 = time.time()
        self.lb = -np.inf

    def new_node(self, depth, fixings, bound, basis, rows_at_basis) -> BnbNode:
        node = BnbNode(node_id=self.next_id, depth=depth, fixings=fixings,
                       parent_bound=bound, basis=basis, rows_at_basis=rows_at_basis)
        self.next_id += 1
        self.nodes[node.node_id] = node
        heapq.heappush(self.heap, (node.parent_bound, node.node_id))
        return node

    def pop(self) -> BnbNode | None:
        while self.heap:
            _, nid = heapq.heappop(self.heap)
            node = self.nodes[nid]
            if node.status == OPEN:
                return node
        return None

    def node_model(self, node: BnbNode) -> LpModel:
        lo = self.base.lower.copy()
        up = self.base.upper.copy()
        for j, (fl, fu) in node.fixings.items():
            lo[j] = max(lo[j], fl)
            up[j] = min(up[j], fu)
        model = self.base if not self.cut_rows else self.base.with_rows(self.cut_rows)
        return model.with_bounds(lo, up)

    def warm(self, node: BnbNode):
        if node.basis is None:
            return None
        extra = len(self.cut_rows) + self.base.n_rows - node.rows_at_basis
        basis = node.basis
        if extra > 0:
            basis = extend_basis(basis, extra)
        return basis

    def add_cuts(self, cuts):
        if self.config.audit_cuts:
            for coef, rel, rhs in cuts:
                for x in self.accepted:
                    act = float(np.asarray(coef) @ x)
                    viol = (rhs - act) if rel == ">=" else (act - rhs)
                    if viol > 5e-6 * (1.0 + abs(rhs)):
                        raise CutRejected(f"cut removes stored incumbent by {viol:.2e}")
        self.cut_rows.extend(cuts)

    def record(self):
        ub = self.incumbent_obj
        lb = self.current_lb()
        t = time.time() - self.t0
        if self.traj and self.traj[-1][0] == self.node_count:
            self.traj[-1] = (self.node_count, lb, ub, t)
        else:
            self.traj.append((self.node_count, lb, ub, t))

    def current_lb(self) -> float:
        open_bounds = [n.parent_bound for n in self.nodes.values() if n.status == OPEN]
        cand = min(open_bounds) if open_bounds else self.incumbent_obj
        self.lb = max(self.lb, min(cand, self.incumbent_obj))
        return self.lb


def solve_bnb(model: LpModel, integer_indices, lazy_cb=None, user_cb=None,
              config: BnbConfig | None = None) -> BnbResult:
    """Branch and bound; incumbents must be accepted by lazy_cb to count."""
    config = config or BnbConfig()
    tree = _Tree(model, integer_indices, config)
    root = tree.new_node(depth=0, fixings={}, bound=-np.inf, basis=None, rows_at_basis=0)

    def finish(status):
        tree.record()
        if status == STATUS_OPTIMAL and tree.incumbent_x is None:
            status = STATUS_INFEASIBLE
        return BnbResult(
            status=status,
            x=tree.incumbent_x,
            objective=tree.incumbent_obj,
            lower_bound=tree.current_lb(),
            node_count=tree.node_count,
            trajectory=tree.traj,
            tree=tree.nodes if config.keep_tree else None,
        )

    while True:
        node = tree.pop()
        if node is None:
            return finish(STATUS_OPTIMAL)
        if config.node_limit is not None and tree.node_count >= config.node_limit:
            node.status = OPEN
            heapq.heappush(tree.heap, (node.parent_bound, node.node_id))
            return finish(STATUS_NODE_LIMIT)
        if config.time_limit is not None and time.time() - tree.t0 >= config.time_limit:
            node.status = OPEN
            heapq.heappush(tree.heap, (node.parent_bound, node.node_id))
            return finish(STATUS_TIME_LIMIT)

        tree.node_count += 1
        if node.parent_bound >= tree.incumbent_obj - 1e-9:
            node.status = FATHOMED
            tree.record()
            continue

        user_called = False
        fractional_counted = False
        rounds = 0
        while True:
            rounds += 1
            if rounds > config.max_lazy_rounds:
                raise RuntimeError("lazy-cut loop did not settle")
            node_model = tree.node_model(node)
            out = solve_lp(node_model, warm_basis=tree.warm(node))
            node.basis = out.basis if out.status == OPTIMAL else None
            node.rows_at_basis = node_model.n_rows
            if out.status != OPTIMAL:
                node.status = FATHOMED
                break
            bound = out.objective
            node.parent_bound = max(node.parent_bound, bound)
            if bound >= tree.incumbent_obj - 1e-9:
                node.status = FATHOMED
                break
            x = out.x
            if _is_integral(x, tree.integer, config.int_tol):
                verdict = lazy_cb(x, node) if lazy_cb is not None else CallbackVerdict()
                if verdict.accept:
                    obj = verdict.exact_value if verdict.exact_value is not None else bound
                    if obj < tree.incumbent_obj - 1e-12:
                        tree.incumbent_obj = obj
                        tree.incumbent_x = x.copy()
                        if config.audit_cuts:
                            tree.accepted.append(x.copy())
                        tree.record()
                    node.status = FATHOMED
                    break
                if not verdict.cuts:
                    raise ValueError("lazy rejection must supply at least one cut")
                tree.add_cuts(verdict.cuts)
                continue
            # fractional
            if not fractional_counted:
                fire = user_cb is not None and tree.frac_count % config.user_cut_every == 0
                tree.frac_count += 1
                fractional_counted = True
                if fire and not user_called:
                    user_called = True
                    verdict = user_cb(x, node)
                    if verdict.cuts:
                        tree.add_cuts(verdict.cuts)
                        continue
            j = most_fractional(x, tree.integer, config.int_tol)
            if j is None:  # numerically integral after all
                node.status = FATHOMED
                break
            lo_j, up_j = node_model.lower[j], node_model.upper[j]
            up_fix = dict(node.fixings)
            up_fix[j] = (float(np.ceil(x[j] - config.int_tol)), up_j)
            dn_fix = dict(node.fixings)
            dn_fix[j] = (lo_j, float(np.floor(x[j] + config.int_tol)))
            # up child first: lower id pops first on bound ties
            tree.new_node(node.depth + 1, up_fix, bound, out.basis, node_model.n_rows)
            tree.new_node(node.depth + 1, dn_fix, bound, out.basis, node_model.n_rows)
            node.status = BRANCHED
            break
        tree.record()
        if tree.incumbent_x is not None:
            lb = tree.current_lb()
            gap = (tree.incumbent_obj - lb) / (1e-10 + abs(tree.incumbent_obj))
            if gap <= config.opt_gap:
                return finish(STATUS_OPTIMAL)
