"""Occupancy replay of a schedule.

Works from the schedule's own events and movements and the expanded
physical network only; it never looks at the time-space network or the
program rows, so it can catch defects in either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .physnet import LOADING, LOADOUT_IN, PhysicalNetwork

if TYPE_CHECKING:
    from .dispatch import Schedule


@dataclass(frozen=True)
class Violation:
    kind: str  # "track", "node", "loading", "continuity"
    where: str
    instant: int
    trains: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.kind} conflict at {self.where} t={self.instant}: {', '.join(self.trains)}"


class ReplayViolation(RuntimeError):
    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(str(v) for v in violations[:5]))
        self.violations = violations


def replay(schedule: "Schedule", network: PhysicalNetwork, up_to: int | None = None) -> list[Violation]:
    """Return every occupancy or continuity violation up to instant ``up_to``.

    A track (all links of one physical group) holds at most one train at
    each instant it is travelled, counting both directions; a node holds at
    most one train at each instant (a load-out loop holds its loop
    capacity).  A real train never conflicts with
    itself.
    """
    group = {l.id: l.group for l in network.links}
    links = {l.id: l for l in network.links}
    g = schedule.instant_len_min
    horizon = math.inf if up_to is None else up_to
    track: dict[tuple[str, int], set[str]] = {}
    nodes: dict[tuple[str, int], set[str]] = {}
    out: list[Violation] = []

    for name in sorted(schedule.trains):
        ts = schedule.trains[name]
        for mv in ts.movements:
            if mv.link is None:
                continue
            link = links.get(mv.link)
            if link is None or {mv.from_node, mv.to} != {link.from_, link.to}:
                out.append(Violation("continuity", f"{mv.link}", mv.enter, (name,)))
                continue
            for q in range(mv.enter + 1, mv.exit + 1):
                if q <= horizon:
                    track.setdefault((group[mv.link], q), set()).add(name)
            if link.kind == LOADING:
                p = network.node(link.from_).loading_time_min or 0
                if (mv.exit - mv.enter) * g < p:
                    out.append(Violation("loading", link.from_, mv.enter, (name,)))
        for ev in ts.events:
            for q in range(ev.arrival, ev.departure + 1):
                if q <= horizon:
                    nodes.setdefault((ev.node, q), set()).add(name)
        for a, b in zip(ts.events, ts.events[1:]):
            if b.arrival < a.departure:
                out.append(Violation("continuity", b.node, b.arrival, (name,)))
            joined = any(
                m.from_node == a.node and m.to == b.node and m.enter == a.departure and m.exit == b.arrival
                for m in ts.movements
            )
            if not joined:
                out.append(Violation("continuity", f"{a.node}->{b.node}", a.departure, (name,)))

    for (grp, q), who in sorted(track.items()):
        if len(who) > 1:
            out.append(Violation("track", grp, q, tuple(sorted(who))))
    for (node, q), who in sorted(nodes.items()):
        n = network.node(node)
        cap = (n.loop_capacity or 1) if n.kind == LOADOUT_IN else 1
        if len(who) > cap:
            out.append(Violation("node", node, q, tuple(sorted(who))))
    return out
