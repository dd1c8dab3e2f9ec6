"""Exact solution of the scheduling program by branching on train paths.

Flow rows force every train onto one source-to-sink path, so the search
picks whole paths train by train.  Each train's paths are generated lazily
in nondecreasing cost order; the bound is the cost fixed so far plus every
remaining train's unconstrained shortest path.  ``brute_force`` is an
independent oracle that enumerates path combinations and checks the rows
of the model directly.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .mip import DEPARTURE_LINK, MipModel, VarKey
from .physnet import LOADOUT_IN
from .tsnet import DEFERRAL, DISAPPEARING, STARTING, TRANSIT

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIMEOUT = "timeout"

EARLIEST_DEPARTURE = "earliest-departure-first"
MOST_CONSTRAINED = "most-constrained-first"

INF = math.inf


@dataclass(frozen=True)
class SolverConfig:
    time_limit_s: float = 60.0
    node_limit: int | None = None
    branching: str = EARLIEST_DEPARTURE
    gap_tolerance: float = 0.0

    def __post_init__(self) -> None:
        if not self.time_limit_s > 0:
            raise ValueError("time_limit_s must be positive")
        if self.branching not in (EARLIEST_DEPARTURE, MOST_CONSTRAINED):
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.gap_tolerance < 0:
            raise ValueError("gap_tolerance must be nonnegative")


class InvariantViolation(AssertionError):
    """The search produced an assignment the rows reject."""


@dataclass
class WarmStart:
    hints: dict[VarKey, int] = field(default_factory=dict)
    # (train, arc identity) pairs; survive rebuilding the network
    signatures: dict[tuple, int] = field(default_factory=dict)

    @classmethod
    def from_solution(cls, solution: "Solution") -> "WarmStart":
        return cls({k: 1 for k, v in solution.assignment.items() if v})

    def for_model(self, model: MipModel) -> "WarmStart":
        """Resolve signatures against ``model``; unknown arcs are dropped."""
        if not self.signatures:
            return self
        tsn = model.tsn
        by_key = {(v.train, tsn.arc_key(tsn.arcs[v.arc])): v for v in model.vars}
        hints = dict(self.hints)
        for sig, val in self.signatures.items():
            v = by_key.get(sig)
            if v is not None:
                hints[v] = val
        return WarmStart(hints)


@dataclass
class Solution:
    status: str
    objective: float
    values: list[int]
    paths: dict[str, list[int]]  # train -> var indices, source to sink
    model: MipModel
    nodes: int = 0
    wall_time: float = 0.0
    ties: int = 0
    diagnostic: str = ""

    @property
    def assignment(self) -> dict[VarKey, int]:
        return {k: v for k, v in zip(self.model.vars, self.values)}

    def arcs(self, train: str) -> list:
        tsn = self.model.tsn
        return [tsn.arcs[self.model.vars[i].arc] for i in self.paths.get(train, ())]

    @property
    def has_incumbent(self) -> bool:
        return bool(self.paths) or not self.model.trains


# --- per-train path graphs ---------------------------------------------------


class _TrainGraph:
    """A train's live arcs as a DAG with exact cost-to-go."""

    def __init__(self, model: MipModel, train: str, var_ids: Sequence[int]):
        tsn = model.tsn
        self.model = model
        self.train = train
        self.source = tsn.sources[train]
        self.sink = tsn.sink
        self.out: dict[int, list[int]] = {}
        for i in var_ids:
            self.out.setdefault(tsn.arcs[model.vars[i].arc].tail, []).append(i)

        def order(n: int) -> float:
            if n == self.source:
                return -1
            if n == self.sink:
                return INF
            return tsn.nodes[n].time  # type: ignore[return-value]

        nodes = {self.source, self.sink}
        for i in var_ids:
            a = tsn.arcs[model.vars[i].arc]
            nodes.add(a.tail)
            nodes.add(a.head)
        self.h: dict[int, float] = {self.sink: 0.0}
        for n in sorted(nodes, key=lambda n: (order(n), n), reverse=True):
            if n == self.sink:
                continue
            best = INF
            for i in self.out.get(n, ()):
                head = tsn.arcs[model.vars[i].arc].head
                best = min(best, model.costs[i] + self.h.get(head, INF))
            self.h[n] = best

    def head(self, i: int) -> int:
        return self.model.tsn.arcs[self.model.vars[i].arc].head

    @property
    def shortest(self) -> float:
        return self.h[self.source]


class _PathStream:
    """Source-to-sink paths of one train in nondecreasing cost order.

    Best-first search over partial paths keyed by cost so far plus exact
    cost-to-go; equal keys fall back to the var-index sequence, so the order
    is deterministic.  Generated paths are memoised.
    """

    def __init__(self, graph: _TrainGraph, first: Sequence[int] | None = None):
        self.g = graph
        self.paths: list[tuple[float, tuple[int, ...]]] = []
        self.heap: list = []
        starts = graph.out.get(graph.source, ()) if first is None else first
        for i in starts:
            self._push(0.0, (), i)

    def _push(self, cost: float, path: tuple[int, ...], i: int) -> None:
        g = self.g
        head = g.head(i)
        h = g.h.get(head, INF)
        if h == INF:
            return
        c = cost + g.model.costs[i]
        heapq.heappush(self.heap, (c + h, path + (i,), c, head))

    def get(self, k: int) -> tuple[float, tuple[int, ...]] | None:
        while len(self.paths) <= k:
            if not self.heap:
                return None
            f, path, c, node = heapq.heappop(self.heap)
            if node == self.g.sink:
                self.paths.append((c, path))
                continue
            for i in self.g.out.get(node, ()):
                self._push(c, path, i)
        return self.paths[k]

    def __iter__(self) -> Iterator[tuple[float, tuple[int, ...]]]:
        k = 0
        while (p := self.get(k)) is not None:
            yield p
            k += 1


def _train_vars(model: MipModel) -> dict[str, list[int]]:
    """Variables each train may set to one (upper bound 1)."""
    out: dict[str, list[int]] = {t.id: [] for t in model.trains}
    for i, v in enumerate(model.vars):
        if model.upper[i]:
            out[v.train].append(i)
    return out


def _order(model: MipModel, graphs: Mapping[str, _TrainGraph], rule: str) -> list[str]:
    """Branching order; a predecessor always precedes its successor."""
    pos = {t.id: i for i, t in enumerate(model.trains)}
    depth: dict[str, int] = {}
    for t in model.trains:
        d, cur = 0, t
        while cur.predecessor is not None:
            d += 1
            cur = model.train(cur.predecessor)
        depth[t.id] = d
    if rule == MOST_CONSTRAINED:
        size = {t: len(g.out) for t, g in graphs.items()}
        key = lambda t: (depth[t.id], size[t.id], t.dep_q, pos[t.id])  # noqa: E731
    else:
        key = lambda t: (depth[t.id], t.dep_q, pos[t.id])  # noqa: E731
    return [t.id for t in sorted(model.trains, key=key)]


def lower_bound(model: MipModel, fixed: Mapping[str, Sequence[int]] | None = None) -> float:
    """Cost of the fixed paths plus each undecided train's shortest path,
    ignoring every row that couples trains."""
    fixed = fixed or {}
    tv = _train_vars(model)
    total = math.fsum(model.costs[i] for p in fixed.values() for i in p)
    for t in model.trains:
        if t.id not in fixed:
            total += _TrainGraph(model, t.id, tv[t.id]).shortest
    return total


class _Occupancy:
    """Node and track-group occupancy of the trains fixed so far."""

    def __init__(self, model: MipModel):
        self.model = model
        tsn = model.tsn
        self.tsn = tsn
        self.chained = {t.id for t in model.trains if t.chained}
        self.nodes: dict[int, int] = {}
        self.cap: dict[int, int] = {}
        for n in tsn.nodes:
            if n.phys is not None and n.time is not None:
                phys = tsn.expanded_phys.node(n.phys)
                if phys.kind == LOADOUT_IN and (phys.loop_capacity or 1) > 1:
                    self.cap[n.id] = phys.loop_capacity
        self.groups: set[tuple[str, int]] = set()
        self.rejects = {"node-capacity": 0, "arc-capacity": 0}

    def claims(self, train: str, path: Sequence[int]) -> tuple[list[int], list[tuple[str, int]]] | None:
        tsn, vars_ = self.tsn, self.model.vars
        nodes, groups = [], []
        for i in path:
            arc = tsn.arcs[vars_[i].arc]
            if arc.head == tsn.sink:
                continue
            if not (arc.klass == STARTING and train in self.chained):
                if self.nodes.get(arc.head, 0) + nodes.count(arc.head) >= self.cap.get(arc.head, 1):
                    self.rejects["node-capacity"] += 1
                    return None
                nodes.append(arc.head)
            if arc.klass == TRANSIT:
                for q in range(arc.k + 1, arc.l + 1):  # type: ignore[operator]
                    if (arc.group, q) in self.groups:
                        self.rejects["arc-capacity"] += 1
                        return None
                    groups.append((arc.group, q))
        return nodes, groups

    def add(self, claim) -> None:
        for n in claim[0]:
            self.nodes[n] = self.nodes.get(n, 0) + 1
        self.groups.update(claim[1])

    def remove(self, claim) -> None:
        for n in claim[0]:
            self.nodes[n] -= 1
        self.groups.difference_update(claim[1])


class _Timeout(Exception):
    pass


def _finish_instant(model: MipModel, train: str, path: Sequence[int]) -> int | None:
    tsn = model.tsn
    last = tsn.arcs[model.vars[path[-1]].arc]
    if last.klass == DISAPPEARING and tsn.nodes[last.tail].phys == tsn.dest_phys[train]:
        return last.k
    return None


def _warm_paths(model: MipModel, warm: WarmStart) -> dict[str, list[int]] | None:
    """Complete hinted arcs into one path per train, or give up."""
    tsn = model.tsn
    tv = _train_vars(model)
    hinted: dict[str, list[int]] = {t.id: [] for t in model.trains}
    for key, v in warm.hints.items():
        i = model.index.get(key)
        if v and i is not None:
            hinted[key.train].append(i)
    paths = {}
    for t in model.trains:
        arcs = sorted(
            hinted[t.id],
            key=lambda i: (-1 if tsn.arcs[model.vars[i].arc].k is None else tsn.arcs[model.vars[i].arc].k, i),
        )
        if not arcs:
            return None
        src, sink = tsn.sources[t.id], tsn.sink
        first = tsn.arcs[model.vars[arcs[0]].arc]
        if first.tail != src:
            lead = [i for i in tv[t.id] if tsn.arcs[model.vars[i].arc].tail == src
                    and tsn.arcs[model.vars[i].arc].head == first.tail]
            if not lead:
                return None
            arcs.insert(0, lead[0])
        last = tsn.arcs[model.vars[arcs[-1]].arc]
        if last.head != sink:
            tail = [i for i in tv[t.id] if tsn.arcs[model.vars[i].arc].tail == last.head
                    and tsn.arcs[model.vars[i].arc].head == sink]
            if not tail:
                return None
            arcs.append(tail[0])
        for a, b in zip(arcs, arcs[1:]):
            if tsn.arcs[model.vars[a].arc].head != tsn.arcs[model.vars[b].arc].tail:
                return None
        paths[t.id] = arcs
    return paths


def _values(model: MipModel, paths: Mapping[str, Sequence[int]]) -> list[int]:
    values = [0] * model.n_vars
    for p in paths.values():
        for i in p:
            values[i] = 1
    return values


def solve(model: MipModel, config: SolverConfig | None = None, warm: WarmStart | None = None) -> Solution:
    config = config or SolverConfig()
    started = time.perf_counter()
    deadline = started + config.time_limit_s
    tv = _train_vars(model)
    graphs = {t.id: _TrainGraph(model, t.id, tv[t.id]) for t in model.trains}
    order = _order(model, graphs, config.branching)
    n = len(order)

    best = INF
    best_paths: dict[str, list[int]] | None = None
    if warm is not None:
        wp = _warm_paths(model, warm)
        if wp is not None:
            vals = _values(model, wp)
            if model.feasible(vals):
                best, best_paths = model.objective_of(vals), wp

    if n == 0:
        return Solution(OPTIMAL, 0.0, [], {}, model, wall_time=time.perf_counter() - started)

    no_path = [t for t in order if graphs[t].shortest == INF]
    if no_path:
        return Solution(
            INFEASIBLE, INF, [0] * model.n_vars, {}, model,
            wall_time=time.perf_counter() - started,
            diagnostic=f"flow-source/flow-sink: no source-to-sink path for {', '.join(no_path)}",
        )

    rest = [0.0] * (n + 1)
    for d in range(n - 1, -1, -1):
        rest[d] = rest[d + 1] + graphs[order[d]].shortest

    preds = {t.id: t.predecessor for t in model.trains}
    free_streams = {t: _PathStream(graphs[t]) for t in order}
    linked_streams: dict[tuple[str, int | None], _PathStream] = {}
    occ = _Occupancy(model)
    chosen: dict[str, tuple[float, tuple[int, ...]]] = {}
    finish: dict[str, int | None] = {}
    stats = {"nodes": 0, "link": 0}
    tsn = model.tsn

    def stream_for(t: str) -> _PathStream | None:
        pre = preds[t]
        if pre is None:
            return free_streams[t]
        q = finish[pre]
        train = model.train(t)
        if q is not None and q < train.dep_q:
            q = None
        key = (t, q)
        if key not in linked_streams:
            src = tsn.sources[t]
            first = []
            for i in graphs[t].out.get(src, ()):
                arc = tsn.arcs[model.vars[i].arc]
                if q is None and arc.klass == DEFERRAL:
                    first.append(i)
                elif q is not None and arc.klass == STARTING and arc.l == q:
                    first.append(i)
            linked_streams[key] = _PathStream(graphs[t], first)
        return linked_streams[key]

    def limit() -> float:
        if best == INF:
            return INF
        return best - config.gap_tolerance * abs(best)

    def dfs(depth: int, cost: float) -> None:
        nonlocal best, best_paths
        if depth == n:
            if cost < best:
                best = cost
                best_paths = {t: list(p) for t, (_, p) in chosen.items()}
            return
        t = order[depth]
        stream = stream_for(t)
        if stream is None:
            return
        for c, path in stream:
            if cost + c + rest[depth + 1] >= limit():
                break
            claim = occ.claims(t, path)
            if claim is None:
                continue
            stats["nodes"] += 1
            if config.node_limit is not None and stats["nodes"] > config.node_limit:
                raise _Timeout
            if time.perf_counter() > deadline:
                raise _Timeout
            occ.add(claim)
            chosen[t] = (c, path)
            finish[t] = _finish_instant(model, t, path)
            dfs(depth + 1, cost + c)
            del chosen[t]
            del finish[t]
            occ.remove(claim)

    status = OPTIMAL
    try:
        dfs(0, 0.0)
    except _Timeout:
        status = TIMEOUT
    wall = time.perf_counter() - started

    if best_paths is None:
        if status == TIMEOUT:
            return Solution(TIMEOUT, INF, [0] * model.n_vars, {}, model, stats["nodes"], wall,
                            diagnostic="no incumbent before the limit")
        worst = max(occ.rejects, key=lambda k: occ.rejects[k])
        diag = f"{worst}: no conflict-free combination of train paths"
        if not any(occ.rejects.values()):
            diag = f"{DEPARTURE_LINK}: chained legs cannot be linked"
        return Solution(INFEASIBLE, INF, [0] * model.n_vars, {}, model, stats["nodes"], wall, diagnostic=diag)

    values = _values(model, best_paths)
    if not model.feasible(values):
        bad = model.violated(values)
        raise InvariantViolation(f"incumbent breaks {bad[0].family if bad else 'a variable bound'}")
    return Solution(status, model.objective_of(values), values, best_paths, model, stats["nodes"], wall)


# --- oracle -----------------------------------------------------------------


class GuardExceeded(RuntimeError):
    pass


def _all_paths(model: MipModel, train: str, var_ids: Sequence[int]) -> list[tuple[int, ...]]:
    tsn = model.tsn
    out: dict[int, list[int]] = {}
    for i in var_ids:
        out.setdefault(tsn.arcs[model.vars[i].arc].tail, []).append(i)
    paths: list[tuple[int, ...]] = []

    def walk(node: int, acc: tuple[int, ...]) -> None:
        if node == tsn.sink:
            paths.append(acc)
            return
        for i in out.get(node, ()):
            walk(tsn.arcs[model.vars[i].arc].head, acc + (i,))

    walk(tsn.sources[train], ())
    return paths


def _count_paths(model: MipModel, train: str, var_ids: Sequence[int]) -> int:
    tsn = model.tsn
    out: dict[int, list[int]] = {}
    for i in var_ids:
        out.setdefault(tsn.arcs[model.vars[i].arc].tail, []).append(i)
    memo: dict[int, int] = {tsn.sink: 1}

    def count(node: int) -> int:
        if node not in memo:
            memo[node] = sum(count(tsn.arcs[model.vars[i].arc].head) for i in out.get(node, ()))
        return memo[node]

    return count(tsn.sources[train])


def path_count_product(model: MipModel) -> int:
    tv = _train_vars(model)
    total = 1
    for t in model.trains:
        total *= _count_paths(model, t.id, tv[t.id])
    return total


def brute_force(model: MipModel, guard: int = 10**7) -> Solution:
    """Exact optimum by enumerating every combination of train paths.

    Row sums are accumulated train by train; a ``<=`` row with nonnegative
    coefficients is rejected as soon as it overflows, any other row once
    all of its trains are placed.
    """
    started = time.perf_counter()
    trains = [t.id for t in model.trains]
    if not trains:
        return Solution(OPTIMAL, 0.0, [], {}, model)
    product = path_count_product(model)
    if product > guard:
        raise GuardExceeded(f"{product} path combinations exceed the guard of {guard}")
    tv = _train_vars(model)
    owner = {i: v.train for i, v in enumerate(model.vars)}
    pos = {t: k for k, t in enumerate(trains)}

    # contribution of each path to each row
    row_of_var: dict[int, list[tuple[int, int]]] = {}
    for r, row in enumerate(model.rows):
        for i, c in row.coeffs:
            row_of_var.setdefault(i, []).append((r, c))
    complete_at = []
    monotone = []
    for row in model.rows:
        complete_at.append(max((pos[owner[i]] for i, _ in row.coeffs), default=-1))
        monotone.append(row.sense == "<=" and all(c >= 0 for _, c in row.coeffs))
    # rows with no live variable at all must hold as 0 (sense) rhs
    for r, row in enumerate(model.rows):
        if not row.coeffs and not row.satisfied([]):
            return Solution(INFEASIBLE, INF, [0] * model.n_vars, {}, model,
                            diagnostic=f"{row.family}: empty row cannot hold")
    due: dict[int, list[int]] = {}
    for r, k in enumerate(complete_at):
        due.setdefault(k, []).append(r)

    options = []
    for t in trains:
        opts = []
        for p in _all_paths(model, t, tv[t]):
            contrib: dict[int, int] = {}
            for i in p:
                for r, c in row_of_var.get(i, ()):
                    contrib[r] = contrib.get(r, 0) + c
            opts.append((math.fsum(model.costs[i] for i in p), p, contrib))
        options.append(opts)

    sums = [0] * len(model.rows)
    best = INF
    best_combo: list[tuple[int, ...]] | None = None
    ties = 0
    combo: list[tuple[int, ...]] = []
    rejects: dict[str, int] = {}

    def rec(k: int) -> None:
        nonlocal best, best_combo, ties
        if k == len(trains):
            obj = math.fsum(model.costs[i] for p in combo for i in p)
            if obj < best:
                best, best_combo, ties = obj, list(combo), 0
            elif obj == best:
                ties += 1
            return
        for _, p, contrib in options[k]:
            ok = True
            for r, c in contrib.items():
                sums[r] += c
            for r, c in contrib.items():
                if monotone[r] and sums[r] > model.rows[r].rhs:
                    ok = False
                    break
            if ok:
                for r in due.get(k, ()):
                    row = model.rows[r]
                    v = sums[r]
                    if not (v <= row.rhs if row.sense == "<=" else v == row.rhs):
                        ok = False
                        break
            if not ok:
                fam = model.rows[r].family
                rejects[fam] = rejects.get(fam, 0) + 1
            if ok:
                combo.append(p)
                rec(k + 1)
                combo.pop()
            for r, c in contrib.items():
                sums[r] -= c

    rec(0)
    wall = time.perf_counter() - started
    if best_combo is None:
        return Solution(INFEASIBLE, INF, [0] * model.n_vars, {}, model, wall_time=wall,
                        diagnostic=f"{max(sorted(rejects), key=rejects.get, default='rows')}: "
                                   "no combination of paths satisfies every row")
    paths = {t: list(p) for t, p in zip(trains, best_combo)}
    values = _values(model, paths)
    return Solution(OPTIMAL, model.objective_of(values), values, paths, model, wall_time=wall, ties=ties)
