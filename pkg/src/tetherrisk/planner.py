"""Risk-aware reward-maximizing planners on the grid graph.

Three planners share one result type:

* :func:`plan_exact` enumerates every simple path from the start.
* :func:`plan_risk_aware` runs Dijkstra over directional components
  ``(vertex, recent moves)`` and re-evaluates the path risk on every
  relaxation, so history-dependent elements are priced correctly up to the
  look-back depth.
* :func:`plan_additive_baseline` is the conventional comparator: Dijkstra
  on a normalized, state-only sum of distance and visibility risk.

Utility is collected reward divided by path risk.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import BudgetError, PlanningError, ValidationError
from .grid import Cell, GraphConfig, GridMap, neighbors
from .risk import RiskConfig, RiskEvaluator, distance_risk, visibility, visibility_risk

EPS_UTIL = 1e-9
UNREACHABLE = math.inf


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValidationError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class Limits:
    max_vertices: int = 16
    max_paths: int = 2_000_000


@dataclass
class VertexResult:
    path: tuple[Cell, ...]
    risk: float
    reward: float = 0.0
    utility: float = 0.0
    cost: float | None = None

    @property
    def reachable(self) -> bool:
        return self.risk != UNREACHABLE


@dataclass
class PlanResult:
    mode: str
    per_vertex: dict[Cell, VertexResult]
    chosen: VertexResult | None = None
    unit_risk: float = 0.0
    stats: dict = field(default_factory=dict)


def collected_reward(m: GridMap, path: Sequence[Cell], rcfg: RewardConfig) -> float:
    """Reward along ``path``: ``reward <- gamma * reward + rewards(v)`` for every step after the start."""
    total = 0.0
    for v in path[1:]:
        total = rcfg.gamma * total + m.rewards.get(tuple(v), 0.0)
    return total


def utility(reward: float, risk: float) -> float:
    return reward / max(risk, EPS_UTIL)


def _utility_key(v: VertexResult) -> tuple:
    # larger utility first, then lower risk, shorter path, lexicographic states
    return (-v.utility, v.risk, len(v.path), v.path)


def _risk_key(v: VertexResult) -> tuple:
    return (v.risk, len(v.path), v.path)


def argmax_utility(candidates: Iterable[VertexResult]) -> VertexResult:
    """Candidate with the highest utility under the documented tie-break order."""
    best = None
    for c in candidates:
        if not c.reachable:
            continue
        if best is None or _utility_key(c) < _utility_key(best):
            best = c
    if best is None:
        raise PlanningError("no reachable candidate")
    return best


def _check_start(m: GridMap) -> None:
    if not m.is_free(m.start):
        raise ValidationError(f"start {m.start} is not free")


# exact -------------------------------------------------------------------

def plan_exact(
    m: GridMap,
    cfg: RiskConfig,
    gcfg: GraphConfig,
    rcfg: RewardConfig = RewardConfig(),
    limits: Limits = Limits(),
) -> PlanResult:
    """Exhaustive depth-first search over all simple paths from the start.

    Returns the max-utility path and, per vertex, the minimum-risk simple
    path (the risk-only oracle used to check the directional planner).
    """
    _check_start(m)
    if rcfg.gamma <= 0:
        raise ValidationError("exact planning requires gamma > 0")
    n_free = len(m.free_cells)
    if n_free > limits.max_vertices:
        raise BudgetError(
            f"exact planner refused: {n_free} free vertices exceed the vertex budget max_vertices={limits.max_vertices}"
        )
    t0 = time.perf_counter()
    ev = RiskEvaluator(m, cfg)
    adj = {s: neighbors(m, s, gcfg) for s in m.free_cells}

    best_risk: dict[Cell, VertexResult] = {}
    best_util: VertexResult | None = None
    n_paths = 0
    max_paths = limits.max_paths
    gamma = rcfg.gamma
    rewards = m.rewards
    step = ev.step

    start = m.start
    path = [start]
    on_path = {start}
    term, tether = step(path)
    # explicit stack of (log_sum, reward, tether, neighbor iterator); retraction
    # restores the cached prefix values instead of inverting the reward update
    stack = [(term, 0.0, tether, iter(adj[start]))]
    pending = (term, 0.0)
    while True:
        if pending is not None:
            log_sum, reward = pending
            pending = None
            n_paths += 1
            if n_paths > max_paths:
                raise BudgetError(f"exact planner refused: more than max_paths={max_paths} simple paths")
            risk = -math.expm1(log_sum)
            u = reward / (risk if risk > EPS_UTIL else EPS_UTIL)
            v = path[-1]
            cur = best_risk.get(v)
            if cur is None or risk <= cur.risk:
                cand = VertexResult(tuple(path), risk, reward, u)
                if cur is None or _risk_key(cand) < _risk_key(cur):
                    best_risk[v] = cand
            if best_util is None or u >= best_util.utility:
                cand = VertexResult(tuple(path), risk, reward, u)
                if best_util is None or _utility_key(cand) < _utility_key(best_util):
                    best_util = cand
        if not stack:
            break
        log_sum, reward, tether, it = stack[-1]
        v = next(it, None)
        if v is None:
            stack.pop()
            on_path.discard(path.pop())
            continue
        if v in on_path:
            continue
        path.append(v)
        try:
            term, t_next = step(path, tether)
        except PlanningError:
            path.pop()
            continue
        on_path.add(v)
        new_log = log_sum + term
        new_reward = gamma * reward + rewards.get(v, 0.0)
        pending = (new_log, new_reward)
        stack.append((new_log, new_reward, t_next, iter(adj[v])))

    per_vertex = {}
    for s in m.free_cells:
        per_vertex[s] = best_risk.get(s, VertexResult((), UNREACHABLE))
    stats = {"paths": n_paths, "evaluations": ev.evaluations, "wall_time_s": time.perf_counter() - t0}
    return PlanResult("exact", per_vertex, best_util, best_risk[start].risk, stats)


# directional Dijkstra -------------------------------------------------------

@dataclass
class DirectionalComponent:
    vertex: Cell
    incoming: tuple[Cell, ...]
    log_survival: float = -math.inf
    pd: "DirectionalComponent | None" = None
    closed: bool = False
    tether: object = None
    depth: int = 0

    @property
    def r(self) -> float:
        """Risk of the best path found so far; ``inf`` while unreached."""
        if self.log_survival == -math.inf:
            return UNREACHABLE
        return -math.expm1(self.log_survival)

    @property
    def key(self) -> tuple:
        return (self.vertex, self.incoming)


def backtrack(d: DirectionalComponent) -> list[Cell]:
    """Start-rooted path ending at ``d`` following predecessor links."""
    if d.r == UNREACHABLE:
        raise PlanningError(f"component {d.key} was never reached")
    out = []
    node: DirectionalComponent | None = d
    while node is not None:
        out.append(node.vertex)
        node = node.pd
    return out[::-1]


def plan_risk_aware(m: GridMap, cfg: RiskConfig, gcfg: GraphConfig, lookback: int = 2) -> PlanResult:
    """Minimum-risk path to every vertex via directional components.

    A component is a vertex together with the last ``lookback - 1`` moves
    used to enter it (none for the start).  Closing order is by risk; each
    relaxation rebuilds the candidate path by backtracking and prices the new
    state from that path, and results keep only simple paths.
    """
    _check_start(m)
    if lookback < 1:
        raise ValidationError(f"lookback must be >= 1, got {lookback}")
    t0 = time.perf_counter()
    ev = RiskEvaluator(m, cfg)
    comps: dict[tuple, DirectionalComponent] = {}

    start = m.start
    root = DirectionalComponent(start, ())
    root.log_survival, root.tether = ev.step([start])
    comps[root.key] = root

    counter = 0
    heap = [(-root.log_survival, 0, start, (), counter, root)]
    closing = []
    expansions = 0
    h = lookback - 1
    while heap:
        neg, depth, _, _, _, comp = heapq.heappop(heap)
        if comp.closed or -neg != comp.log_survival:
            continue
        comp.closed = True
        closing.append(comp.r)
        expansions += 1
        path = backtrack(comp)
        on_path = set(path)
        for v in neighbors(m, comp.vertex, gcfg):
            if v in on_path:
                continue
            move = tuple(b - a for a, b in zip(comp.vertex, v))
            incoming = (comp.incoming + (move,))[-h:] if h else ()
            key = (v, incoming)
            nxt = comps.get(key)
            if nxt is not None and nxt.closed:
                continue
            try:
                term, tether = ev.step(path + [v], comp.tether)
            except PlanningError:
                continue
            cand = comp.log_survival + term
            if nxt is None:
                nxt = comps[key] = DirectionalComponent(v, incoming)
            better = cand > nxt.log_survival
            if not better and cand == nxt.log_survival:
                better = (depth + 1, path + [v]) < (nxt.depth, backtrack(nxt))
            if better:
                nxt.log_survival, nxt.pd, nxt.tether, nxt.depth = cand, comp, tether, depth + 1
                counter += 1
                heapq.heappush(heap, (-cand, depth + 1, v, incoming, counter, nxt))

    per_vertex: dict[Cell, VertexResult] = {}
    for s in m.free_cells:
        per_vertex[s] = VertexResult((), UNREACHABLE)
    for comp in comps.values():
        if not comp.closed:
            continue
        cand = VertexResult(tuple(backtrack(comp)), comp.r)
        cur = per_vertex[comp.vertex]
        if not cur.reachable or _risk_key(cand) < _risk_key(cur):
            per_vertex[comp.vertex] = cand
    stats = {
        "expansions": expansions,
        "components": len(comps),
        "evaluations": ev.evaluations,
        "closing_risks": closing,
        "wall_time_s": time.perf_counter() - t0,
    }
    return PlanResult("approx", per_vertex, None, root.r, stats)


def select_max_utility(ensemble: PlanResult, m: GridMap, rcfg: RewardConfig = RewardConfig()) -> PlanResult:
    """Pick the ensemble path with the highest reward-to-risk ratio.

    Staying at the start is always a candidate.
    """
    per_vertex = {}
    for s, v in ensemble.per_vertex.items():
        if v.reachable:
            reward = collected_reward(m, v.path, rcfg)
            v = VertexResult(v.path, v.risk, reward, utility(reward, v.risk), v.cost)
        per_vertex[s] = v
    unit = VertexResult((m.start,), ensemble.unit_risk, 0.0, 0.0)
    chosen = argmax_utility([unit, *per_vertex.values()])
    return PlanResult(ensemble.mode, per_vertex, chosen, ensemble.unit_risk, dict(ensemble.stats))


# conventional baseline --------------------------------------------------------

def additive_costs(m: GridMap, cfg: RiskConfig) -> dict[Cell, float]:
    """Equal-weight sum of distance and visibility risk, each normalized by its map maximum."""
    dist = {s: distance_risk(m, s, cfg) for s in m.free_cells}
    vis = {s: visibility_risk(visibility(m, s, cfg.n_rays), cfg) for s in m.free_cells}
    dmax = max(dist.values(), default=0.0)
    vmax = max(vis.values(), default=0.0)
    out = {}
    for s in m.free_cells:
        d = dist[s] / dmax if dmax > 0 else 0.0
        v = vis[s] / vmax if vmax > 0 else 0.0
        out[s] = 0.5 * d + 0.5 * v
    return out


def plan_additive_baseline(m: GridMap, cfg: RiskConfig, gcfg: GraphConfig) -> PlanResult:
    """Label-setting shortest paths on additive state costs.

    Reported risks are re-evaluated with the full risk model so the two
    planners can be compared on the same scale; the additive objective is
    kept in ``cost``.
    """
    _check_start(m)
    t0 = time.perf_counter()
    cost = additive_costs(m, cfg)
    start = m.start
    best: dict[Cell, tuple] = {start: (cost[start], 1, (start,))}
    heap = [(cost[start], 1, (start,))]
    done = set()
    while heap:
        c, n, path = heapq.heappop(heap)
        v = path[-1]
        if v in done:
            continue
        done.add(v)
        for w in neighbors(m, v, gcfg):
            if w in done:
                continue
            cand = (c + cost[w], n + 1, path + (w,))
            if w not in best or cand < best[w]:
                best[w] = cand
                heapq.heappush(heap, cand)

    ev = RiskEvaluator(m, cfg)
    per_vertex = {}
    for s in m.free_cells:
        if s in best:
            c, _, path = best[s]
            per_vertex[s] = VertexResult(path, ev.risk(list(path)), cost=c)
        else:
            per_vertex[s] = VertexResult((), UNREACHABLE)
    unit = ev.risk([start])
    stats = {"expansions": len(done), "wall_time_s": time.perf_counter() - t0}
    return PlanResult("baseline", per_vertex, None, unit, stats)
