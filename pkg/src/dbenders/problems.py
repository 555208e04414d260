"""Benchmark instance generators and the brute-force reference solver.

Three families are provided in BlockMilp form:

  * UFLP: facility binaries x, per-customer assignment blocks, master row
    sum_i x_i >= 2; the subproblem separates into continuous knapsacks.
  * SNIP: sensor binaries on a layered DAG, one second-stage block per
    (origin, destination) scenario, budget row sum x <= b; second stage is a
    max-reliability path LP.
  * A motivating analog: a two-variable instance whose feasibility region is
    a thin channel between two tangent fans, leaving exactly two integral
    points; the value function is identically zero on its domain, so every
    Benders iteration peels off one hyperplane of the channel.

brute_force_solve enumerates integral x and prices each assignment by LP;
it is the verification oracle for everything else.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from dbenders.benders import BlockMilp, ScenarioBlock, eval_sub_dual
from dbenders.lp import GE, OPTIMAL, solve_lp

ENUM_CAP = 2**20


class TooLarge(Exception):
    pass


class BadShape(Exception):
    pass


class Disconnected(Exception):
    pass


class ConstructionFailed(Exception):
    pass


@dataclass
class UflpInstance:
    n_facilities: int
    n_customers: int
    fixed: np.ndarray          # opening costs f_i
    cost: np.ndarray           # transport costs c[i, j]
    cost_class: str = "b"


@dataclass
class SnipInstance:
    n_nodes: int
    arcs: list[tuple[int, int]]
    sensor_arcs: list[int]               # indices into arcs
    r: np.ndarray                        # no-sensor reliabilities per arc
    q: np.ndarray                        # with-sensor reliabilities per arc
    scenarios: list[tuple[int, int, float]]   # (origin, destination, probability)
    budget: float
    psi: np.ndarray = field(default=None)     # psi[j, k], max-reliability j -> d_k


_CLASS_FACTOR = {"a": 0.1, "b": 1.0, "c": 10.0}


def gen_uflp(n_facilities: int, n_customers: int, seed: int = 0, cost_class: str = "b",
             fixed=None, cost=None) -> tuple[UflpInstance, BlockMilp]:
    """UFLP instance and its BlockMilp; explicit costs bypass the generator."""
    if n_facilities < 2 or n_customers < 2:
        raise BadShape("need at least 2 facilities and 2 customers")
    if cost_class not in _CLASS_FACTOR:
        raise BadShape(f"unknown cost class {cost_class!r}")
    if fixed is None or cost is None:
        rng = np.random.default_rng(seed)
        pts_f = rng.uniform(0.0, 100.0, size=(n_facilities, 2))
        pts_c = rng.uniform(0.0, 100.0, size=(n_customers, 2))
        cost = np.linalg.norm(pts_f[:, None, :] - pts_c[None, :, :], axis=2)
        fixed = rng.uniform(50.0, 150.0, size=n_facilities) * _CLASS_FACTOR[cost_class]
    fixed = np.asarray(fixed, dtype=float)
    cost = np.asarray(cost, dtype=float).reshape(n_facilities, n_customers)
    if np.any(fixed < 0) or np.any(cost < 0) or not np.all(np.isfinite(cost)):
        raise BadShape("costs must be finite and nonnegative")
    inst = UflpInstance(n_facilities, n_customers, fixed, cost, cost_class)

    I, J = n_facilities, n_customers
    rows_per = 1 + 2 * I
    m = J * rows_per
    A = np.zeros((m, I))
    B = np.zeros((m, I * J))
    b = np.zeros(m)
    d = np.zeros(I * J)
    blocks = []
    for j in range(J):
        base = j * rows_per
        ycol = lambda i: j * I + i
        B[base, [ycol(i) for i in range(I)]] = 1.0     # sum_i y_ij >= 1
        b[base] = 1.0
        for i in range(I):
            A[base + 1 + i, i] = 1.0                   # x_i - y_ij >= 0
            B[base + 1 + i, ycol(i)] = -1.0
            B[base + 1 + I + i, ycol(i)] = 1.0         # y_ij >= 0
            d[ycol(i)] = cost[i, j]
        blocks.append(ScenarioBlock(rows=list(range(base, base + rows_per)),
                                    y_cols=[j * I + i for i in range(I)]))
    milp = BlockMilp(
        c=fixed, d=d, A=A, B=B, b=b,
        D=np.ones((1, I)), h=np.array([2.0]),
        lower=np.zeros(I), upper=np.ones(I),
        integer=list(range(I)), scenarios=blocks,
        meta={"problem": "uflp", "facilities": I, "customers": J,
              "cost_class": cost_class, "seed": seed},
    )
    milp.validate()
    return inst, milp


def _max_reliability(n_nodes: int, arcs, r: np.ndarray, dest: int) -> np.ndarray:
    """Max multiplicative path reliability to dest: Dijkstra on -log r."""
    out = [[] for _ in range(n_nodes)]
    for a, (i, j) in enumerate(arcs):
        if r[a] > 0.0:
            out[j].append((i, -math.log(r[a])))   # reversed arcs, costs -log r
    dist = np.full(n_nodes, np.inf)
    dist[dest] = 0.0
    heap = [(0.0, dest)]
    while heap:
        du, u = heapq.heappop(heap)
        if du > dist[u] + 1e-15:
            continue
        for v, w in out[u]:
            nd = du + w
            if nd < dist[v] - 1e-15:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    psi = np.exp(-dist)
    psi[~np.isfinite(dist)] = 0.0
    return psi


def gen_snip(n_nodes: int, arc_density: float, n_sensor_arcs: int, n_scenarios: int,
             budget: float, seed: int = 0) -> tuple[SnipInstance, BlockMilp]:
    """Layered-DAG SNIP instance; raises Disconnected when some o_k cannot reach d_k."""
    rng = np.random.default_rng(seed)
    width = max(2, n_nodes // 4)
    layers = []
    node = 0
    while node < n_nodes:
        size = min(width, n_nodes - node)
        layers.append(list(range(node, node + size)))
        node += size
    if len(layers) < 2:
        raise BadShape("need at least two layers")
    arcs = []
    for la, lb in zip(layers, layers[1:]):
        for u in la:
            targets = [v for v in lb if rng.uniform() < arc_density]
            if not targets:
                targets = [lb[int(rng.integers(len(lb)))]]   # backbone arc
            for v in targets:
                arcs.append((u, v))
    arcs = sorted(set(arcs))
    probs = rng.uniform(0.5, 1.5, size=n_scenarios)
    probs /= probs.sum()
    scenarios = []
    for k in range(n_scenarios):
        o = int(rng.choice(layers[0]))
        dnode = int(rng.choice(layers[-1]))
        scenarios.append((o, dnode, float(probs[k])))
    # connectivity repair: every o_k must reach d_k, so thread a path through
    # one representative per intermediate layer when none exists yet
    arc_set = set(arcs)
    for o, dnode, _ in scenarios:
        reach = _max_reliability(n_nodes, sorted(arc_set), np.ones(len(arc_set)), dnode)
        if reach[o] > 0.0:
            continue
        path = [o] + [int(rng.choice(layer)) for layer in layers[1:-1]] + [dnode]
        for u, v in zip(path, path[1:]):
            arc_set.add((u, v))
    arcs = sorted(arc_set)
    r = rng.uniform(0.4, 0.95, size=len(arcs))
    q = r * rng.uniform(0.0, 0.4, size=len(arcs))
    n_sensor_arcs = min(n_sensor_arcs, len(arcs))
    sensor_arcs = sorted(rng.choice(len(arcs), size=n_sensor_arcs, replace=False).tolist())
    psi = np.zeros((n_nodes, n_scenarios))
    for k, (o, dnode, _) in enumerate(scenarios):
        psi[:, k] = _max_reliability(n_nodes, arcs, r, dnode)
        if psi[o, k] <= 0.0:
            raise Disconnected(f"scenario {k}: no path {o} -> {dnode}")
    inst = SnipInstance(n_nodes, arcs, sensor_arcs, r, q, scenarios, float(budget), psi)
    return inst, snip_block_milp(inst)


def snip_block_milp(inst: SnipInstance) -> BlockMilp:
    n_x = len(inst.sensor_arcs)
    K = len(inst.scenarios)
    N = inst.n_nodes
    sensor_of_arc = {a: s for s, a in enumerate(inst.sensor_arcs)}
    rows_per = 1 + len(inst.arcs) + len(inst.sensor_arcs) + N
    A = np.zeros((K * rows_per, n_x))
    B = np.zeros((K * rows_per, K * N))
    b = np.zeros(K * rows_per)
    d = np.zeros(K * N)
    blocks = []
    for k, (o, dest, p) in enumerate(inst.scenarios):
        base = k * rows_per
        ycol = lambda i: k * N + i
        row = base
        B[row, ycol(dest)] = 1.0                       # y_{d_k,k} >= 1
        b[row] = 1.0
        row += 1
        for a, (i, j) in enumerate(inst.arcs):
            B[row, ycol(i)] = 1.0                      # y_i - r y_j >= -(r-q) psi x
            B[row, ycol(j)] += -inst.r[a]
            if a in sensor_of_arc:
                A[row, sensor_of_arc[a]] = (inst.r[a] - inst.q[a]) * inst.psi[j, k]
            row += 1
        for a in inst.sensor_arcs:
            i, j = inst.arcs[a]
            B[row, ycol(i)] = 1.0                      # y_i - q y_j >= 0
            B[row, ycol(j)] += -inst.q[a]
            row += 1
        for i in range(N):
            B[row, ycol(i)] = 1.0                      # y >= 0
            row += 1
        d[ycol(o)] = p
        blocks.append(ScenarioBlock(rows=list(range(base, base + rows_per)),
                                    y_cols=[k * N + i for i in range(N)]))
    milp = BlockMilp(
        c=np.zeros(n_x), d=d, A=A, B=B, b=b,
        D=-np.ones((1, n_x)), h=np.array([-inst.budget]),
        lower=np.zeros(n_x), upper=np.ones(n_x),
        integer=list(range(n_x)), scenarios=blocks,
        meta={"problem": "snip", "nodes": N, "scenarios": K, "budget": inst.budget},
    )
    milp.validate()
    return milp


def snip_scenario_value_dp(inst: SnipInstance, x: np.ndarray, k: int) -> float:
    """Direct max-reliability evaluation of scenario k under sensor plan x."""
    eff = inst.r.copy()
    for s, a in enumerate(inst.sensor_arcs):
        if x[s] > 0.5:
            eff[a] = inst.q[a]
    o, dest, _ = inst.scenarios[k]
    return float(_max_reliability(inst.n_nodes, inst.arcs, eff, dest)[o])


def build_motivating_analog(seed: int = 0) -> BlockMilp:
    """Two-variable analog of the zig-zag instance: X = {0..50} x {0,1}, f = 0.

    dom f is the channel between tangent fans of two shallow parabolas
    (eps*x1^2 from below, 1 - eps*x1^2 from above), so the only integral
    feasible points are (0,0) and (0,1) and the optimum under c = (-2, -1)
    is (0,1) with objective -1.  Construction is verified by enumeration.
    """
    rng = np.random.default_rng(seed)
    eps = (1.0 / 2600.0) * (1.0 + 0.1 * rng.uniform(-1.0, 1.0))
    rows = []
    rhs = []
    for a in range(51):
        rows.append([-2.0 * eps * a, 1.0])            # x2 >= eps*(2a x1 - a^2)
        rhs.append(-eps * a * a)
        rows.append([-2.0 * eps * a, -1.0])           # x2 <= 1 - eps*(2a x1 - a^2)
        rhs.append(-1.0 - eps * a * a)
    milp = BlockMilp(
        c=np.array([-2.0, -1.0]), d=np.zeros(0),
        A=np.array(rows), B=np.zeros((len(rows), 0)), b=np.array(rhs),
        D=np.zeros((0, 2)), h=np.zeros(0),
        lower=np.zeros(2), upper=np.array([50.0, 1.0]),
        integer=[0, 1],
        meta={"problem": "motivating-analog", "seed": seed},
    )
    feas = enumerate_feasible(milp)
    pts = sorted(tuple(int(round(v)) for v in x) for x, _ in feas)
    if pts != [(0, 0), (0, 1)]:
        raise ConstructionFailed(f"expected exactly (0,0),(0,1); got {pts}")
    obj, best = brute_force_solve(milp)
    if abs(obj - (-1.0)) > 1e-9 or tuple(np.round(best).astype(int)) != (0, 1):
        raise ConstructionFailed("optimum check failed")
    return milp


def gen_random_milp(seed: int, n_x: int = 5, n_y: int = 8, m: int = 12,
                    with_scenarios: bool = False) -> BlockMilp:
    """Seeded mixed-binary instance honoring the dual-nonemptiness assumption.

    d is manufactured as B'pi0 for a nonnegative pi0 (so the value function is
    finite where the sub is feasible) and b keeps one sampled (x0, y0) pair
    feasible (so the instance itself is feasible); other x may still yield
    infeasible subproblems, which exercises feasibility cuts.
    """
    rng = np.random.default_rng(seed)
    A = rng.integers(-3, 4, size=(m, n_x)).astype(float)
    B = rng.integers(-3, 4, size=(m, n_y)).astype(float)
    for i in range(m):  # no empty rows
        if not B[i].any() and not A[i].any():
            B[i, int(rng.integers(n_y))] = 1.0
    pi0 = rng.uniform(0.0, 2.0, size=m)
    d = B.T @ pi0
    x0 = rng.integers(0, 2, size=n_x).astype(float)
    y0 = rng.uniform(-2.0, 2.0, size=n_y)
    b = A @ x0 + B @ y0 - rng.uniform(0.0, 2.0, size=m)
    c = rng.integers(-5, 6, size=n_x).astype(float)
    scen = None
    if with_scenarios:
        # split rows/y-columns into two blocks with block-diagonal B
        half_r, half_c = m // 2, n_y // 2
        B[:half_r, half_c:] = 0.0
        B[half_r:, :half_c] = 0.0
        d = B.T @ pi0
        b = A @ x0 + B @ y0 - rng.uniform(0.0, 2.0, size=m)
        scen = [ScenarioBlock(rows=list(range(half_r)), y_cols=list(range(half_c))),
                ScenarioBlock(rows=list(range(half_r, m)), y_cols=list(range(half_c, n_y)))]
    milp = BlockMilp(c=c, d=d, A=A, B=B, b=b,
                     D=np.zeros((0, n_x)), h=np.zeros(0),
                     lower=np.zeros(n_x), upper=np.ones(n_x),
                     integer=list(range(n_x)), scenarios=scen,
                     meta={"problem": "random", "seed": seed})
    milp.validate()
    return milp


def _integral_assignments(milp: BlockMilp, cap: int):
    sizes = []
    for j in milp.integer:
        lo, up = int(math.ceil(milp.lower[j] - 1e-9)), int(math.floor(milp.upper[j] + 1e-9))
        sizes.append(up - lo + 1)
    total = 1
    for s in sizes:
        total *= s
        if total > cap:
            raise TooLarge(f"{total} integral assignments exceed cap {cap}")
    ranges = [range(int(math.ceil(milp.lower[j] - 1e-9)), int(math.floor(milp.upper[j] + 1e-9)) + 1)
              for j in milp.integer]
    return product(*ranges)


def value_at(milp: BlockMilp, x: np.ndarray, warm: dict | None = None) -> float:
    """f(x) = sum of scenario subproblem values; +inf if any block infeasible."""
    total = 0.0
    for sc in milp.scenario_ids():
        ev = eval_sub_dual(milp, x, sc)
        if not ev.feasible:
            return np.inf
        total += ev.value
    return total


def enumerate_feasible(milp: BlockMilp, cap: int = ENUM_CAP) -> list[tuple[np.ndarray, float]]:
    """All integral x in X with finite f(x); requires every x to be integral."""
    if milp.integer != list(range(milp.n_x)):
        raise BadShape("enumeration requires all x integral")
    out = []
    for vals in _integral_assignments(milp, cap):
        x = np.array(vals, dtype=float)
        if milp.D.size and np.any(milp.D @ x < milp.h - 1e-9):
            continue
        f = value_at(milp, x)
        if np.isfinite(f):
            out.append((x, f))
    return out


def brute_force_solve(milp: BlockMilp, cap: int = ENUM_CAP) -> tuple[float, np.ndarray | None]:
    """Minimum of c'x + f(x) over integral x; ties go to the lexicographic min."""
    all_integral = milp.integer == list(range(milp.n_x))
    best = np.inf
    best_x = None
    if all_integral:
        for vals in _integral_assignments(milp, cap):
            x = np.array(vals, dtype=float)
            if milp.D.size and np.any(milp.D @ x < milp.h - 1e-9):
                continue
            f = value_at(milp, x)
            if not np.isfinite(f):
                continue
            val = float(milp.c @ x) + f
            if val < best - 1e-12:
                best, best_x = val, x
        return best, best_x
    # mixed case: fix the integral block and price the remaining LP
    from dbenders.benders import extensive_model
    ext = extensive_model(milp)
    for vals in _integral_assignments(milp, cap):
        lo = ext.lower.copy()
        up = ext.upper.copy()
        for j, v in zip(milp.integer, vals):
            lo[j] = up[j] = float(v)
        out = solve_lp(ext.with_bounds(lo, up))
        if out.status != OPTIMAL:
            continue
        if out.objective < best - 1e-12:
            best = out.objective
            best_x = out.x[: milp.n_x]
    return best, best_x
