"""Binary multi-commodity flow program over a time-space network.

One binary variable per (model train, arc).  Rows come in six families:
per-train flow rows (source, sink, balance), node capacity, arc capacity
over each track group, and the departure link tying a leg's start to its
predecessor's arrival.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

from .physnet import FWD, LOADING, LOADOUT_IN, ModelTrain, PhysicalNetwork, TimeGrid
from .tsnet import (
    DEFERRAL,
    DISAPPEARING,
    STARTING,
    TRANSIT,
    WAITING,
    TimeSpaceNetwork,
    TsArc,
)

FLOW_SOURCE = "flow-source"
FLOW_SINK = "flow-sink"
FLOW_BALANCE = "flow-balance"
NODE_CAPACITY = "node-capacity"
ARC_CAPACITY = "arc-capacity"
DEPARTURE_LINK = "departure-link"

FAMILIES = (FLOW_SOURCE, FLOW_SINK, FLOW_BALANCE, NODE_CAPACITY, ARC_CAPACITY, DEPARTURE_LINK)


class InfeasibleTrain(ValueError):
    """A train has no way to leave its source inside the horizon."""

    def __init__(self, train: str, reason: str):
        super().__init__(f"train {train}: {reason}")
        self.train = train


@dataclass(frozen=True)
class PenaltyConfig:
    gamma: float = 1.0
    alpha: float = 1.0
    beta: float = 10.0
    rho: float = 100.0
    big_m: float | None = None  # None: derived from the instance
    # instants before the window end at which stopping short costs
    # rho * time_left + alpha per unused instant instead of big_m
    end_slack: int = 0

    def __post_init__(self) -> None:
        for name in ("gamma", "alpha", "beta", "rho"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"penalty {name} must be a finite nonnegative number")
        if self.big_m is not None and not self.big_m > 0:
            raise ValueError("penalty big_m must be positive")
        if self.end_slack < 0:
            raise ValueError("end_slack must be nonnegative")

    def routing_bound(self, horizon: int, n_trains: int) -> float:
        """Upper bound on transit, dwell and late-departure cost of any
        cancellation-free schedule."""
        q, n = horizon, max(1, n_trains)
        return self.gamma * q * n + self.alpha * q * q * n + self.beta * q * n

    def resolved(self, horizon: int, n_trains: int, max_time_left: int) -> "PenaltyConfig":
        stop = self.rho * max_time_left + self.alpha * self.end_slack
        floor = max(self.routing_bound(horizon, n_trains), stop)
        if self.big_m is None:
            bound = self.routing_bound(horizon, n_trains) + stop * max(1, n_trains)
            return replace(self, big_m=float(10 * bound if bound > 0 else 1))
        if not self.big_m > floor:
            raise ValueError(
                f"big_m={self.big_m} must exceed both the routing-cost bound and "
                f"rho * max time_left ({floor})"
            )
        return self


class VarKey(NamedTuple):
    train: str
    arc: int


@dataclass(frozen=True)
class Row:
    family: str
    coeffs: tuple[tuple[int, int], ...]  # (var index, coefficient)
    sense: str  # "<=" or "="
    rhs: int
    tag: tuple = ()  # identifies the row inside its family

    def lhs(self, values: Sequence[int]) -> int:
        return sum(c * values[i] for i, c in self.coeffs)

    def satisfied(self, values: Sequence[int]) -> bool:
        v = self.lhs(values)
        return v <= self.rhs if self.sense == "<=" else v == self.rhs


# --- time left --------------------------------------------------------------


@dataclass(frozen=True)
class TimeLeft:
    """Shortest travel time in instants from each node to each train's
    destination, ignoring other trains."""

    table: Mapping[str, Mapping[str, int]]  # train -> node -> instants
    unreachable: int

    def __call__(self, node: str, train: str) -> int:
        return self.table[train].get(node, self.unreachable)

    @property
    def max_value(self) -> int:
        return max([self.unreachable] + [v for t in self.table.values() for v in t.values()])


def allowed_moves(network: PhysicalNetwork, train: ModelTrain, dest: str) -> list[tuple[str, str, int, str, str]]:
    """Directed moves ``(from, to, instants, link id, direction)`` open to a
    train, before any ban.  A loading link is only open to trains whose
    destination is that load-out."""
    moves = []
    for l in network.links:
        if l.kind == LOADING and l.to != dest:
            continue
        moves.append((l.from_, l.to, l.fwd_q, l.id, FWD))
        if not l.oneway:
            moves.append((l.to, l.from_, l.bwd_q, l.id, "bwd"))
    return moves  # type: ignore[return-value]


def compute_time_left(tsn: TimeSpaceNetwork, trains: Sequence[ModelTrain]) -> TimeLeft:
    net = tsn.expanded_phys
    unreachable = 1 + sum(max(l.fwd_q, l.bwd_q) for l in net.links)  # type: ignore[type-var]
    table = {}
    for t in trains:
        dest = tsn.dest_phys[t.id]
        rev: dict[str, list[tuple[str, int]]] = {}
        for a, b, q, link_id, d in allowed_moves(net, t, dest):
            if net.link(link_id).banned(t.tags, d):
                continue
            rev.setdefault(b, []).append((a, q))
        dist = {dest: 0}
        heap = [(0, dest)]
        while heap:
            d0, v = heapq.heappop(heap)
            if d0 > dist[v]:
                continue
            for u, q in rev.get(v, ()):
                nd = d0 + q
                if nd < dist.get(u, unreachable):
                    dist[u] = nd
                    heapq.heappush(heap, (nd, u))
        table[t.id] = dist
    return TimeLeft(table, unreachable)


# --- costs ------------------------------------------------------------------


def arc_cost(
    train: ModelTrain,
    arc: TsArc,
    penalties: PenaltyConfig,
    time_left: TimeLeft,
    grid: TimeGrid,
    tsn: TimeSpaceNetwork,
) -> float:
    """Cost of ``train`` using ``arc``.

    Transit costs gamma per instant, dwell is weighted by how early in the
    horizon it happens, a late start costs beta per instant of delay, and
    leaving the network costs rho times the remaining distance (zero at the
    destination), or big_m when a train gives up short of its destination
    before the last instant.
    """
    if arc.klass == TRANSIT:
        return penalties.gamma * (arc.l - arc.k)  # type: ignore[operator]
    if arc.klass == WAITING:
        return penalties.alpha * (grid.horizon_instants - arc.k // grid.per_hour)  # type: ignore[operator]
    if arc.klass == STARTING:
        return penalties.beta * (arc.l - train.dep_q)  # type: ignore[operator]
    if arc.klass == DISAPPEARING:
        node = tsn.nodes[arc.tail].phys
        if node == tsn.dest_phys[train.id]:
            return penalties.rho * time_left(node, train.id)  # type: ignore[arg-type]
        early = grid.last - arc.k  # type: ignore[operator]
        if early <= penalties.end_slack:
            return penalties.rho * time_left(node, train.id) + penalties.alpha * early  # type: ignore[arg-type]
        assert penalties.big_m is not None
        return penalties.big_m
    if arc.klass == DEFERRAL:
        # same as starting on the last instant and leaving at once
        return penalties.beta * (grid.last - train.dep_q) + penalties.rho * time_left(
            tsn.dep_phys[train.id], train.id
        )
    raise ValueError(f"unknown arc class {arc.klass!r}")


# --- model ------------------------------------------------------------------


@dataclass(frozen=True)
class Reservation:
    """Track group held by a train in motion up to (and including) ``until``."""

    group: str
    until: int
    owner: str


@dataclass
class MipModel:
    tsn: TimeSpaceNetwork
    trains: tuple[ModelTrain, ...]
    penalties: PenaltyConfig
    grid: TimeGrid
    time_left: TimeLeft
    reservations: tuple[Reservation, ...]
    vars: list[VarKey] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    # 0 fixes a variable at zero (a banned movement); pruning drops these
    upper: list[int] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    index: dict[VarKey, int] = field(default_factory=dict)
    # variables a full build would create; pruning only shrinks ``vars``
    full_var_count: int = 0
    dest_unreachable: tuple[str, ...] = ()

    @property
    def n_vars(self) -> int:
        return len(self.vars)

    def train(self, train_id: str) -> ModelTrain:
        for t in self.trains:
            if t.id == train_id:
                return t
        raise KeyError(train_id)

    def live_arcs(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {t.id: [] for t in self.trains}
        for v in self.vars:
            out[v.train].append(v.arc)
        return out

    def objective_of(self, values: Sequence[int]) -> float:
        return math.fsum(c for c, x in zip(self.costs, values) if x)

    def violated(self, values: Sequence[int]) -> list[Row]:
        return [r for r in self.rows if not r.satisfied(values)]

    def out_of_bounds(self, values: Sequence[int]) -> list[int]:
        return [i for i, (x, u) in enumerate(zip(values, self.upper)) if x > u]

    def feasible(self, values: Sequence[int]) -> bool:
        return not self.out_of_bounds(values) and not self.violated(values)

    def families(self) -> dict[str, int]:
        out = {f: 0 for f in FAMILIES}
        for r in self.rows:
            out[r.family] += 1
        return out


def candidate_arcs(
    tsn: TimeSpaceNetwork, train: ModelTrain, reservations: Iterable[Reservation] = ()
) -> list[int]:
    """Arcs a train may use at all: its own source arcs, shared movement
    and exit arcs, minus foreign loading links and reserved track."""
    net = tsn.expanded_phys
    dest = tsn.dest_phys[train.id]
    loading_ok = {l.id for l in net.links if l.kind != LOADING or l.to == dest}
    blocked = [r for r in reservations if r.owner != train.id]
    out = []
    for arc in tsn.arcs:
        if arc.klass in (STARTING, DEFERRAL):
            if arc.train == train.id:
                out.append(arc.id)
            continue
        if arc.klass == TRANSIT:
            if arc.link not in loading_ok:
                continue
            if any(r.group == arc.group and arc.k < r.until for r in blocked):  # type: ignore[operator]
                continue
        out.append(arc.id)
    return out


def build_model(
    tsn: TimeSpaceNetwork,
    trains: Sequence[ModelTrain] | None = None,
    penalties: PenaltyConfig | None = None,
    grid: TimeGrid | None = None,
    *,
    live: Mapping[str, Iterable[int]] | None = None,
    reservations: Sequence[Reservation] = (),
    time_left: TimeLeft | None = None,
) -> MipModel:
    """Build the binary program.

    ``live`` restricts each train to a subset of its candidate arcs; the
    pruning passes call back in here so pruned variables are never created.
    """
    trains = tuple(tsn.trains if trains is None else trains)
    grid = grid or tsn.grid
    ids = [t.id for t in trains]
    if sorted(ids) != sorted(t.id for t in tsn.trains):
        raise ValueError("time-space network was built for a different set of trains")
    time_left = time_left or compute_time_left(tsn, trains)
    penalties = (penalties or PenaltyConfig()).resolved(
        grid.horizon_instants, len(trains), time_left.max_value
    )
    model = MipModel(tsn, trains, penalties, grid, time_left, tuple(reservations))

    net = tsn.expanded_phys
    full = 0
    for t in trains:
        cand = candidate_arcs(tsn, t, reservations)
        full += len(cand)
        if live is not None:
            keep = set(live.get(t.id, ()))
            cand = [a for a in cand if a in keep]
        for a in cand:
            key = VarKey(t.id, a)
            model.index[key] = len(model.vars)
            model.vars.append(key)
            model.costs.append(arc_cost(t, tsn.arcs[a], penalties, time_left, grid, tsn))
            model.upper.append(0 if _banned(net, t, tsn.arcs[a]) else 1)
    model.full_var_count = full

    _add_rows(model)
    return model


def _add_rows(model: MipModel) -> None:
    tsn, grid, rows = model.tsn, model.grid, model.rows
    by_train: dict[str, list[int]] = {t.id: [] for t in model.trains}
    for i, v in enumerate(model.vars):
        by_train[v.train].append(i)

    for t in model.trains:
        src = tsn.sources[t.id]
        mine = by_train[t.id]
        rows.append(Row(FLOW_SOURCE, tuple((i, 1) for i in mine if tsn.arcs[model.vars[i].arc].tail == src), "=", 1, (t.id,)))
        rows.append(Row(FLOW_SINK, tuple((i, 1) for i in mine if tsn.arcs[model.vars[i].arc].head == tsn.sink), "=", 1, (t.id,)))
        balance: dict[int, list[tuple[int, int]]] = {}
        for i in mine:
            arc = tsn.arcs[model.vars[i].arc]
            if arc.tail != src:
                balance.setdefault(arc.tail, []).append((i, 1))
            if arc.head != tsn.sink:
                balance.setdefault(arc.head, []).append((i, -1))
        for node in sorted(balance):
            rows.append(Row(FLOW_BALANCE, tuple(sorted(balance[node])), "=", 0, (t.id, node)))

    # a chained leg starts where its predecessor stops: same physical train
    chained = {t.id for t in model.trains if t.chained}
    inbound: dict[int, list[int]] = {}
    for i, v in enumerate(model.vars):
        arc = tsn.arcs[v.arc]
        if arc.head == tsn.sink:
            continue
        if arc.klass == STARTING and v.train in chained:
            continue
        inbound.setdefault(arc.head, []).append(i)
    for node in sorted(inbound):
        phys = tsn.expanded_phys.node(tsn.nodes[node].phys)
        cap = (phys.loop_capacity or 1) if phys.kind == LOADOUT_IN else 1
        rows.append(Row(NODE_CAPACITY, tuple((i, 1) for i in inbound[node]), "<=", cap, (node,)))

    by_group: dict[str, list[int]] = {}
    for i, v in enumerate(model.vars):
        arc = tsn.arcs[v.arc]
        if arc.klass == TRANSIT:
            by_group.setdefault(arc.group, []).append(i)  # type: ignore[arg-type]
    for grp in sorted(by_group):
        members = by_group[grp]
        for q in range(grid.horizon_instants):
            occ = tuple(
                (i, 1) for i in members
                if tsn.arcs[model.vars[i].arc].k <= q - 1 and tsn.arcs[model.vars[i].arc].l >= q  # type: ignore[operator]
            )
            if occ:
                rows.append(Row(ARC_CAPACITY, occ, "<=", 1, (grp, q)))

    for t in model.trains:
        if not t.chained:
            continue
        pre = model.train(t.predecessor)  # type: ignore[arg-type]
        dep = tsn.dep_phys[t.id]
        if dep != tsn.dest_phys[pre.id]:
            raise ValueError(f"train {t.id} departs {dep} but {pre.id} ends at {tsn.dest_phys[pre.id]}")
        for q in range(t.dep_q, grid.horizon_instants):
            node = tsn.node_at(dep, q)
            start = [a for a in tsn.inb[node] if tsn.arcs[a].klass == STARTING and tsn.arcs[a].train == t.id]
            leave = [a for a in tsn.outb[node] if tsn.arcs[a].head == tsn.sink]
            if not leave:
                raise ValueError(f"predecessor {pre.id} has no disappearing arc at {dep}^{q}")
            coeffs = []
            for a in start:
                i = model.index.get(VarKey(t.id, a))
                if i is not None:
                    coeffs.append((i, 1))
            for a in leave:
                i = model.index.get(VarKey(pre.id, a))
                if i is not None:
                    coeffs.append((i, -1))
            if coeffs:
                rows.append(Row(DEPARTURE_LINK, tuple(coeffs), "=", 0, (t.id, q)))


# --- pre-processing ---------------------------------------------------------


def _banned(net: PhysicalNetwork, train: ModelTrain, arc: TsArc) -> bool:
    return arc.klass == TRANSIT and net.link(arc.link).banned(train.tags, arc.direction)  # type: ignore[arg-type]


def prune_banned(model: MipModel, network: PhysicalNetwork | None = None, trains: Sequence[ModelTrain] | None = None) -> MipModel:
    """Drop variables for movements a train is not allowed to make (those
    the model already fixes at zero)."""
    net = network or model.tsn.expanded_phys
    tsn = model.tsn
    live = model.live_arcs()
    changed = False
    for t in trains or model.trains:
        keep = []
        for a in live[t.id]:
            arc = tsn.arcs[a]
            if _banned(net, t, arc):
                changed = True
                continue
            keep.append(a)
        live[t.id] = keep
    if not changed:
        return model
    return _rebuild(model, live)


def prune_unreachable(model: MipModel, tsn: TimeSpaceNetwork | None = None, trains: Sequence[ModelTrain] | None = None) -> MipModel:
    """Keep only arcs on some source-to-sink path of each train.

    Raises ``InfeasibleTrain`` when a train cannot leave its source at all.
    Trains that can only end by cancelling are listed in
    ``dest_unreachable`` on the returned model.
    """
    tsn = tsn or model.tsn
    live = model.live_arcs()
    unreachable = []
    for t in trains or model.trains:
        arcs = [tsn.arcs[a] for a in live[t.id]]
        out: dict[int, list] = {}
        inn: dict[int, list] = {}
        for arc in arcs:
            out.setdefault(arc.tail, []).append(arc)
            inn.setdefault(arc.head, []).append(arc)
        fwd = _reach(tsn.sources[t.id], out, lambda a: a.head)
        bwd = _reach(tsn.sink, inn, lambda a: a.tail)
        keep = [a.id for a in arcs if a.tail in fwd and a.head in bwd]
        if not any(tsn.arcs[a].tail == tsn.sources[t.id] for a in keep):
            raise InfeasibleTrain(t.id, "no path from its source to the sink inside the horizon")
        dest = tsn.dest_phys[t.id]
        if not any(
            tsn.arcs[a].klass == DISAPPEARING and tsn.nodes[tsn.arcs[a].tail].phys == dest for a in keep
        ):
            unreachable.append(t.id)
        live[t.id] = keep
    pruned = _rebuild(model, live)
    pruned.dest_unreachable = tuple(unreachable)
    return pruned


def _reach(start: int, adj: Mapping[int, list], step) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        for arc in adj.get(stack.pop(), ()):
            nxt = step(arc)
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _rebuild(model: MipModel, live: Mapping[str, Iterable[int]]) -> MipModel:
    rebuilt = build_model(
        model.tsn, model.trains, model.penalties, model.grid,
        live=live, reservations=model.reservations, time_left=model.time_left,
    )
    rebuilt.dest_unreachable = model.dest_unreachable
    return rebuilt


def preprocess(model: MipModel) -> MipModel:
    """Ban pruning followed by reachability pruning."""
    return prune_unreachable(prune_banned(model))
