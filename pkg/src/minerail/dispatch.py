"""Rolling-horizon dispatch: plan, execute one cycle, re-plan.

Each cycle re-expands the network over a fresh window starting at the
current clock, rebuilds model trains from what is still pending, solves,
stitches the legs of every real train back together and then replays the
first cycle of the plan to move the world forward.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Sequence

from .mip import PenaltyConfig, Reservation, build_model, preprocess
from .physnet import ModelTrain, PhysicalNetwork, TimeGrid, RealTrain, validate_fleet
from .replay import ReplayViolation, replay
from .solver import Solution, SolverConfig, WarmStart, solve
from .tsnet import DEFERRAL, DISAPPEARING, TRANSIT, WAITING, TimeSpaceNetwork, build_tsnet, expand

logger = logging.getLogger(__name__)

COMPLETED = "completed"
CANCELLED = "cancelled"
IN_PROGRESS = "in_progress"  # stopped by the end of the window
PENDING = "pending"  # not started in this plan


@dataclass(frozen=True)
class Event:
    node: str
    arrival: int
    departure: int


@dataclass(frozen=True)
class Movement:
    link: str | None
    from_node: str
    to: str
    enter: int
    exit: int
    kind: str = TRANSIT


@dataclass
class LegPlan:
    leg: str
    status: str
    start: int | None = None
    end: int | None = None
    end_node: str | None = None
    reason: str = ""


@dataclass
class TrainSchedule:
    name: str
    legs: list[LegPlan] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    movements: list[Movement] = field(default_factory=list)
    cancelled: bool = False
    reason: str = ""

    @property
    def status(self) -> str:
        if self.cancelled:
            return CANCELLED
        if all(l.status == COMPLETED for l in self.legs):
            return COMPLETED
        if any(l.status == IN_PROGRESS for l in self.legs):
            return IN_PROGRESS
        return PENDING

    def position(self, t: int) -> tuple[str, str | None, Movement | None]:
        """Where the train is at instant ``t``: ("idle"|"node"|"link"|"gone", node, movement)."""
        if not self.events or t < self.events[0].arrival:
            return ("idle", None, None)
        for mv in self.movements:
            if mv.enter < t < mv.exit:
                return ("link", mv.to, mv)
        for ev in self.events:
            if ev.arrival <= t <= ev.departure:
                return ("node", ev.node, None)
        return ("gone", None, None)


@dataclass
class Schedule:
    clock: int
    instant_len_min: int
    horizon_instants: int
    status: str
    objective: float
    breakdown: dict[str, float] = field(default_factory=dict)
    trains: dict[str, TrainSchedule] = field(default_factory=dict)
    diagnostic: str = ""

    def to_doc(self) -> dict[str, Any]:
        g = self.instant_len_min
        trains = {}
        for name in sorted(self.trains):
            ts = self.trains[name]
            trains[name] = {
                "status": ts.status,
                "cancelled": ts.cancelled,
                "reason": ts.reason,
                "legs": [asdict(l) for l in ts.legs],
                "events": [
                    {**asdict(e), "arrival_min": e.arrival * g, "departure_min": e.departure * g}
                    for e in ts.events
                ],
                "movements": [
                    {
                        "link": m.link, "from": m.from_node, "to": m.to, "kind": m.kind,
                        "enter": m.enter, "exit": m.exit, "enter_min": m.enter * g, "exit_min": m.exit * g,
                    }
                    for m in ts.movements
                ],
            }
        return {
            "clock": self.clock,
            "instant_len_min": g,
            "horizon_instants": self.horizon_instants,
            "status": self.status,
            "objective": _num(self.objective),
            "breakdown": {k: _num(v) for k, v in sorted(self.breakdown.items())},
            "diagnostic": self.diagnostic,
            "trains": trains,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "Schedule":
        trains = {}
        for name, td in doc["trains"].items():
            trains[name] = TrainSchedule(
                name,
                legs=[LegPlan(**l) for l in td["legs"]],
                events=[Event(e["node"], e["arrival"], e["departure"]) for e in td["events"]],
                movements=[
                    Movement(m["link"], m["from"], m["to"], m["enter"], m["exit"], m.get("kind", TRANSIT))
                    for m in td["movements"]
                ],
                cancelled=td["cancelled"],
                reason=td.get("reason", ""),
            )
        return cls(
            doc["clock"], doc["instant_len_min"], doc["horizon_instants"], doc["status"],
            float(doc["objective"]) if doc["objective"] is not None else math.inf,
            dict(doc.get("breakdown", {})), trains, doc.get("diagnostic", ""),
        )

    def suffix(self, t: int) -> dict[str, tuple[list[Event], list[Movement]]]:
        """Events and movements from instant ``t`` on, clipped at ``t``."""
        out = {}
        for name in sorted(self.trains):
            ts = self.trains[name]
            evs = [
                Event(e.node, max(e.arrival, t), e.departure) for e in ts.events if e.departure >= t
            ]
            mvs = [m for m in ts.movements if m.exit > t]
            out[name] = (evs, mvs)
        return out


def _num(x: float) -> float | int | None:
    if x is None or not math.isfinite(x):
        return None
    return int(x) if float(x).is_integer() else x


def stitch(
    solution: Solution,
    trains: Sequence[ModelTrain] | None = None,
    clock: int = 0,
) -> Schedule:
    """Join each real train's legs into one continuous schedule.

    Times in the result are absolute (``clock`` plus the window instant).
    A leg that leaves the network short of its destination before the last
    instant cancels the real train from that point on.
    """
    model = solution.model
    tsn = model.tsn
    grid = model.grid
    trains = tuple(trains if trains is not None else model.trains)
    breakdown: dict[str, float] = {}
    for i, v in enumerate(solution.values):
        if v:
            k = tsn.arcs[model.vars[i].arc].klass
            breakdown[k] = breakdown.get(k, 0.0) + model.costs[i]
    sched = Schedule(
        clock, grid.instant_len_min, grid.horizon_instants, solution.status,
        solution.objective, breakdown, diagnostic=solution.diagnostic,
    )
    by_real: dict[str, list[ModelTrain]] = {}
    for t in trains:
        by_real.setdefault(t.real_train, []).append(t)

    for real in by_real:
        legs = _chain_order(by_real[real])
        ts = TrainSchedule(real)
        sched.trains[real] = ts
        for leg in legs:
            if ts.cancelled:
                ts.legs.append(LegPlan(leg.id, CANCELLED, reason="earlier leg cancelled"))
                continue
            arcs = solution.arcs(leg.id)
            if not arcs:
                ts.legs.append(LegPlan(leg.id, PENDING, reason=solution.diagnostic or "no plan"))
                continue
            plan = _add_leg(ts, leg, arcs, tsn, clock, model.penalties.end_slack)
            ts.legs.append(plan)
            if plan.status == CANCELLED:
                ts.cancelled = True
                ts.reason = plan.reason
    return sched


def _chain_order(legs: Sequence[ModelTrain]) -> list[ModelTrain]:
    ids = {l.id for l in legs}
    heads = [l for l in legs if l.predecessor not in ids]
    nxt = {l.predecessor: l for l in legs if l.predecessor in ids}
    out = []
    for h in heads:
        cur: ModelTrain | None = h
        while cur is not None:
            out.append(cur)
            cur = nxt.get(cur.id)
    return out


def _add_leg(ts: TrainSchedule, leg: ModelTrain, arcs, tsn: TimeSpaceNetwork, clock: int, slack: int = 0) -> LegPlan:
    last = tsn.grid.last
    first = arcs[0]
    if first.klass == DEFERRAL:
        return LegPlan(leg.id, PENDING, reason="predecessor does not finish inside the window")
    start = first.l + clock
    node = tsn.nodes[first.head].phys
    if ts.events and ts.events[-1].node == node and ts.events[-1].departure == start:
        pass  # hand-over from the predecessor leg at the same node and instant
    elif ts.events and ts.events[-1].departure > start:
        raise ValueError(f"leg {leg.id} starts at {start} before its predecessor ends")
    else:
        ts.events.append(Event(node, start, start))  # type: ignore[arg-type]
    plan = LegPlan(leg.id, IN_PROGRESS, start=start)
    for arc in arcs[1:]:
        cur = ts.events[-1]
        if arc.klass == DISAPPEARING:
            k = arc.k + clock
            ts.events[-1] = replace(cur, departure=k)
            plan.end, plan.end_node = k, cur.node
            if cur.node == tsn.dest_phys[leg.id]:
                plan.status = COMPLETED
            elif last - arc.k <= slack:  # type: ignore[operator]
                plan.status = IN_PROGRESS
                plan.reason = f"window ends at {cur.node}"
            else:
                plan.status = CANCELLED
                plan.reason = f"cancelled at {cur.node}"
            break
        k, l = arc.k + clock, arc.l + clock
        head = tsn.nodes[arc.head].phys
        if arc.klass == WAITING:
            ts.events[-1] = replace(cur, departure=l)
            ts.movements.append(Movement(None, cur.node, head, k, l, WAITING))  # type: ignore[arg-type]
            continue
        link = tsn.expanded_phys.link(arc.link)  # type: ignore[arg-type]
        ts.events[-1] = replace(cur, departure=k)
        ts.movements.append(Movement(arc.link, cur.node, head, k, l, link.kind))  # type: ignore[arg-type]
        ts.events.append(Event(head, l, l))  # type: ignore[arg-type]
    return plan


# --- world state ------------------------------------------------------------


@dataclass(frozen=True)
class Position:
    kind: str  # "idle" | "node" | "link"
    node: str | None = None
    link: str | None = None
    group: str | None = None
    until: int | None = None  # exit instant of a link in progress


@dataclass
class WorldState:
    clock: int
    legs: tuple[ModelTrain, ...]
    positions: dict[str, Position] = field(default_factory=dict)
    completed: dict[str, int] = field(default_factory=dict)  # leg -> finish instant
    cancelled: dict[str, str] = field(default_factory=dict)  # leg -> reason

    @classmethod
    def initial(cls, legs: Sequence[ModelTrain]) -> "WorldState":
        return cls(0, tuple(legs), {l.real_train: Position("idle") for l in legs})

    @property
    def pending_legs(self) -> list[ModelTrain]:
        return [l for l in self.legs if l.id not in self.completed and l.id not in self.cancelled]

    @property
    def done(self) -> bool:
        return not self.pending_legs

    def to_doc(self) -> dict[str, Any]:
        return {
            "clock": self.clock,
            "legs": [
                {**asdict(l), "tags": sorted(l.tags)} for l in self.legs
            ],
            "positions": {k: asdict(v) for k, v in sorted(self.positions.items())},
            "completed": dict(sorted(self.completed.items())),
            "cancelled": dict(sorted(self.cancelled.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "WorldState":
        legs = tuple(ModelTrain(**{**l, "tags": frozenset(l["tags"])}) for l in doc["legs"])
        return cls(
            doc["clock"], legs,
            {k: Position(**v) for k, v in doc["positions"].items()},
            dict(doc["completed"]), dict(doc["cancelled"]),
        )


@dataclass(frozen=True)
class CycleConfig:
    cycle_len_min: int = 5
    horizon_instants: int = 5
    penalties: PenaltyConfig = PenaltyConfig()
    solver: SolverConfig = SolverConfig()
    # None: one instant less than the longest single move, so a train is
    # never forced to idle just to line up with the end of the window
    end_slack: int | None = None

    def grid(self, network: PhysicalNetwork) -> TimeGrid:
        g = network.grid.instant_len_min
        if self.cycle_len_min <= 0 or self.cycle_len_min % g:
            raise ValueError(f"cycle length {self.cycle_len_min} min is not a multiple of g={g}")
        return TimeGrid(g, self.horizon_instants)

    def steps(self, network: PhysicalNetwork) -> int:
        return self.cycle_len_min // self.grid(network).instant_len_min


@dataclass
class CyclePlan:
    """Everything one planning cycle produced."""

    schedule: Schedule
    warm: WarmStart
    solution: Solution
    trains: tuple[ModelTrain, ...]


def _window_trains(state: WorldState, grid: TimeGrid) -> tuple[list[ModelTrain], list[Reservation]]:
    by_real: dict[str, list[ModelTrain]] = {}
    for leg in state.pending_legs:
        by_real.setdefault(leg.real_train, []).append(leg)
    trains: list[ModelTrain] = []
    reservations: list[Reservation] = []
    for real in by_real:
        legs = _chain_order(by_real[real])
        head = legs[0]
        pos = state.positions.get(real, Position("idle"))
        if pos.kind == "idle":
            first = replace(head, dep_q=max(0, head.dep_q - state.clock))
            if head.predecessor is not None:
                first = replace(first, predecessor=None)
        elif pos.kind == "node":
            first = replace(head, dep_node=pos.node, dep_q=0, predecessor=None, fixed_start=True)  # type: ignore[arg-type]
        else:
            until = pos.until - state.clock  # type: ignore[operator]
            first = replace(head, dep_node=pos.node, dep_q=until, predecessor=None, fixed_start=True)  # type: ignore[arg-type]
            reservations.append(Reservation(pos.group, until, head.id))  # type: ignore[arg-type]
        if first.dep_q > grid.last:
            continue  # not inside this window yet
        trains.append(first)
        for leg in legs[1:]:
            dep_q = max(0, leg.dep_q - state.clock)
            if dep_q > grid.last:
                break
            trains.append(replace(leg, dep_q=dep_q))
    return trains, reservations


def plan(
    state: WorldState,
    network: PhysicalNetwork,
    config: CycleConfig,
    warm: WarmStart | None = None,
) -> CyclePlan:
    grid = config.grid(network)
    trains, reservations = _window_trains(state, grid)
    tsn = build_tsnet(network.with_grid(grid) if network.grid != grid else network, grid, trains)
    slack = config.end_slack
    if slack is None:
        slack = max((a.duration for a in tsn.arcs if a.klass == TRANSIT), default=1) - 1
    penalties = replace(config.penalties, end_slack=slack)
    model = preprocess(build_model(tsn, trains, penalties, grid, reservations=reservations))
    solution = solve(model, config.solver, warm.for_model(model) if warm is not None else None)
    schedule = stitch(solution, trains, state.clock)
    return CyclePlan(schedule, _shifted(solution, config.steps(network)), solution, tuple(trains))


def plan_cycle(
    state: WorldState,
    network: PhysicalNetwork,
    config: CycleConfig,
    warm: WarmStart | None = None,
) -> tuple[Schedule, WarmStart]:
    """Plan the window starting at ``state.clock``.

    Returns the stitched schedule and the warm start for the next cycle
    (this plan shifted back by one cycle).  When the program is infeasible
    every train in the window is flagged and the state is left alone.
    """
    p = plan(state, network, config, warm)
    return p.schedule, p.warm


def _shifted(solution: Solution, steps: int) -> WarmStart:
    """Arcs of the plan that still lie inside the next window, moved back
    by ``steps`` instants and keyed by their identity rather than index."""
    model = solution.model
    tsn = model.tsn
    sigs: dict[tuple, int] = {}
    for train, path in solution.paths.items():
        for i in path:
            key = tsn.arc_key(tsn.arcs[model.vars[i].arc])
            moved = _shift_key(key, steps)
            if moved is not None:
                sigs[(train, moved)] = 1
    return WarmStart(signatures=sigs)


def _shift_key(key: tuple, steps: int) -> tuple | None:
    tail, head, klass, link, rep = key
    out = []
    for node in (tail, head):
        if len(node) == 2 and isinstance(node[1], int) and node[0] not in ("<source>",):
            t = node[1] - steps
            if t < 0:
                return None
            out.append((node[0], t))
        else:
            out.append(node)
    return (out[0], out[1], klass, link, rep)


def advance(
    state: WorldState,
    schedule: Schedule,
    config: CycleConfig,
    network: PhysicalNetwork,
) -> WorldState:
    """Execute one cycle of ``schedule`` and return the next state.

    The executed part is replayed first; any occupancy conflict aborts
    with ``ReplayViolation``.
    """
    steps = config.steps(network)
    new_clock = state.clock + steps
    expanded = expand(network)
    violations = replay(schedule, expanded, up_to=new_clock)
    if violations:
        raise ReplayViolation(violations)

    completed = dict(state.completed)
    cancelled = dict(state.cancelled)
    positions = dict(state.positions)
    legs_of: dict[str, list[ModelTrain]] = {}
    for leg in state.legs:
        legs_of.setdefault(leg.real_train, []).append(leg)

    for real, ts in schedule.trains.items():
        for lp in ts.legs:
            if lp.end is None or lp.end > new_clock:
                continue
            if lp.status == COMPLETED:
                completed[lp.leg] = lp.end
            elif lp.status == CANCELLED:
                for leg in legs_of[real]:
                    if leg.id not in completed:
                        cancelled[leg.id] = lp.reason
        kind, node, mv = ts.position(new_clock)
        if kind == "link":
            link = expanded.link(mv.link)  # type: ignore[union-attr]
            positions[real] = Position("link", node, mv.link, link.group, mv.exit)  # type: ignore[union-attr]
        elif kind == "node":
            first = ts.events[0]
            fresh = first.arrival == new_clock and ts.legs and ts.legs[0].start == new_clock and not any(
                l.id in completed for l in legs_of[real]
            )
            if fresh and state.positions.get(real, Position("idle")).kind == "idle":
                positions[real] = Position("idle")
            else:
                positions[real] = Position("node", node)
        elif kind == "gone":
            positions[real] = Position("idle")
    return WorldState(new_clock, state.legs, positions, completed, cancelled)


@dataclass
class SimulationResult:
    plans: list[Schedule]
    states: list[WorldState]
    violations: int = 0

    @property
    def final(self) -> WorldState:
        return self.states[-1]


def simulate(
    network: PhysicalNetwork,
    legs: Sequence[ModelTrain],
    config: CycleConfig,
    cycles: int | None = None,
    max_cycles: int = 200,
) -> SimulationResult:
    """Run plan/advance until every leg is done, ``cycles`` cycles have
    run, or a window has no feasible plan.  ``cycles=0`` only plans the
    first window."""
    state = WorldState.initial(legs)
    result = SimulationResult([], [state])
    if cycles == 0:
        result.plans.append(plan(state, network, config).schedule)
        return result
    warm: WarmStart | None = None
    limit = max_cycles if cycles is None else cycles
    for n in range(limit):
        if state.done:
            break
        p = plan(state, network, config, warm)
        result.plans.append(p.schedule)
        if not p.solution.has_incumbent:
            logger.error("cycle %d: %s %s", n, p.solution.status, p.solution.diagnostic)
            break
        state = advance(state, p.schedule, config, network)
        result.states.append(state)
        warm = p.warm
    return result


def solve_offline(
    network: PhysicalNetwork,
    fleet: Sequence[RealTrain],
    penalties: PenaltyConfig | None = None,
    solver: SolverConfig | None = None,
    grid: TimeGrid | None = None,
) -> tuple[Schedule, Solution]:
    """One-shot build, prune, solve and stitch over a single window."""
    grid = grid or network.grid
    net = network.with_grid(grid) if network.grid != grid else network
    legs = validate_fleet(fleet, net, grid)
    tsn = build_tsnet(net, grid, legs)
    model = preprocess(build_model(tsn, legs, penalties, grid))
    solution = solve(model, solver)
    return stitch(solution, legs), solution
