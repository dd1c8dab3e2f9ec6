"""Expansion of a physical network into a time-space network.

Three passes rewrite the physical network (load-out split, capacity
subdivision, siding nodes); ``build_tsnet`` then lays the result out over
the time grid.  Every link of the expanded network carries the ``group`` of
the physical track it belongs to, which is the unit of single occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .physnet import (
    BOTH,
    BWD,
    DUMMY,
    FWD,
    LOADING,
    LOADOUT,
    LOADOUT_IN,
    LOADOUT_OUT,
    SIDING,
    SIDING_NODE,
    STATION,
    ModelTrain,
    NetworkError,
    PhysicalNetwork,
    PhysLink,
    PhysNode,
    TimeGrid,
)

TRANSIT = "transit"
WAITING = "waiting"
STARTING = "starting"
DISAPPEARING = "disappearing"
# source -> sink for a chained leg whose predecessor does not finish in time
DEFERRAL = "deferral"

ARC_CLASSES = (TRANSIT, WAITING, STARTING, DISAPPEARING, DEFERRAL)

SPLIT = "split_loadouts"
SUBDIVIDED = "subdivide_by_capacity"
SIDINGS = "insert_siding_nodes"


def apportion(total: int, parts: int) -> list[int]:
    """Split ``total`` instants into ``parts`` integer shares that sum to it.

    Equal shares leave equal remainders, so the extra instants go to the
    leading segments.  No share drops below one instant, which is the only
    case where the sum exceeds ``total``.
    """
    base, extra = divmod(total, parts)
    return [max(1, base + (1 if i < extra else 0)) for i in range(parts)]


def _with_instants(network: PhysicalNetwork) -> tuple[PhysLink, ...]:
    g = network.grid
    out = []
    for l in network.links:
        if l.fwd_q is None or l.bwd_q is None:
            l = replace(
                l,
                fwd_q=l.fwd_q or g.to_instants(l.travel_fwd_min),
                bwd_q=l.bwd_q or g.to_instants(l.travel_bwd_min),
            )
        out.append(l)
    return tuple(out)


def _directed_bans(bans: Iterable[tuple[str, str]]) -> set[tuple[str, str]]:
    out = set()
    for tag, d in bans:
        if d == BOTH:
            out |= {(tag, FWD), (tag, BWD)}
        else:
            out.add((tag, d))
    return out


@dataclass
class _Bundle:
    """One undirected piece of track, possibly stored as a one-way pair."""

    a_f: str  # tail when travelling a -> b
    a_b: str  # head when travelling b -> a
    b_f: str
    b_b: str
    fwd_q: int
    bwd_q: int
    fwd_min: float
    bwd_min: float
    bans: set[tuple[str, str]]  # relative to a -> b
    proto: PhysLink


def _bundles(links: Sequence[PhysLink]) -> dict[str, _Bundle]:
    by_group: dict[str, list[PhysLink]] = {}
    for l in links:
        by_group.setdefault(l.group, []).append(l)
    out = {}
    for grp, members in by_group.items():
        if len(members) == 1 and not members[0].oneway:
            l = members[0]
            out[grp] = _Bundle(
                l.from_, l.from_, l.to, l.to, l.fwd_q, l.bwd_q,  # type: ignore[arg-type]
                l.travel_fwd_min, l.travel_bwd_min, _directed_bans(l.bans), l,
            )
        elif len(members) == 2 and all(m.oneway for m in members) and members[0].id.endswith(">"):
            lf, lb = members
            bans = {(t, FWD) for t, d in _directed_bans(lf.bans) if d == FWD}
            bans |= {(t, BWD) for t, d in _directed_bans(lb.bans) if d == FWD}
            out[grp] = _Bundle(
                lf.from_, lb.to, lf.to, lb.from_, lf.fwd_q, lb.fwd_q,  # type: ignore[arg-type]
                lf.travel_fwd_min, lb.travel_fwd_min, bans, lf,
            )
    return out


def _chain(
    bundle: _Bundle,
    mids: Sequence[str],
    ids: Sequence[str],
    groups: Sequence[str],
    kind: str,
    capacity: float,
) -> list[PhysLink]:
    n = len(mids) + 1
    fq = apportion(bundle.fwd_q, n)
    bq = apportion(bundle.bwd_q, n)
    ends = [(bundle.a_f, bundle.a_b), *[(m, m) for m in mids], (bundle.b_f, bundle.b_b)]
    out = []
    for i in range(n):
        (x_f, x_b), (y_f, y_b) = ends[i], ends[i + 1]
        common = dict(kind=kind, capacity=capacity, group=groups[i])
        if x_f == x_b and y_f == y_b:
            out.append(
                PhysLink(
                    ids[i], x_f, y_f,
                    travel_fwd_min=bundle.fwd_min / n, travel_bwd_min=bundle.bwd_min / n,
                    bans=frozenset(bundle.bans), fwd_q=fq[i], bwd_q=bq[i], **common,
                )
            )
        else:
            out.append(
                PhysLink(
                    ids[i] + ">", x_f, y_f,
                    travel_fwd_min=bundle.fwd_min / n, travel_bwd_min=bundle.fwd_min / n,
                    bans=frozenset((t, FWD) for t, d in bundle.bans if d == FWD),
                    oneway=True, fwd_q=fq[i], bwd_q=fq[i], **common,
                )
            )
            out.append(
                PhysLink(
                    ids[i] + "<", y_b, x_b,
                    travel_fwd_min=bundle.bwd_min / n, travel_bwd_min=bundle.bwd_min / n,
                    bans=frozenset((t, FWD) for t, d in bundle.bans if d == BWD),
                    oneway=True, fwd_q=bq[i], bwd_q=bq[i], **common,
                )
            )
    return out


def split_loadouts(network: PhysicalNetwork) -> PhysicalNetwork:
    """Replace each load-out by an entry and an exit node.

    The two are joined by a one-way loading link lasting the loading time.
    A link touching a load-out becomes a one-way pair: the direction into
    the load-out ends at its entry node, the direction out of it starts at
    its exit node.  Both halves keep the original link's group.
    """
    if SPLIT in network.expanded:
        return network
    g = network.grid
    links = _with_instants(network)
    lo = {n.id for n in network.nodes if n.kind == LOADOUT}
    if not lo:
        return replace(network, links=links, expanded=network.expanded | {SPLIT})

    nodes: list[PhysNode] = []
    new_links: list[PhysLink] = []
    for n in network.nodes:
        if n.id in lo:
            nodes.append(PhysNode(n.id + ".in", LOADOUT_IN, n.loading_time_min, n.loop_capacity, origin=n.id))
            nodes.append(PhysNode(n.id + ".out", LOADOUT_OUT, origin=n.id))
            p = n.loading_time_min
            q = g.to_instants(p)  # type: ignore[arg-type]
            new_links.append(
                PhysLink(
                    n.id + ".load", n.id + ".in", n.id + ".out", LOADING, 1, p, p,  # type: ignore[arg-type]
                    oneway=True, fwd_q=q, bwd_q=q,
                )
            )
        else:
            nodes.append(n)

    def out_of(x: str) -> str:
        return x + ".out" if x in lo else x

    def into(x: str) -> str:
        return x + ".in" if x in lo else x

    for l in links:
        if l.from_ not in lo and l.to not in lo:
            new_links.append(l)
            continue
        bans = _directed_bans(l.bans)
        new_links.append(
            replace(
                l, id=l.id + ">", from_=out_of(l.from_), to=into(l.to),
                travel_bwd_min=l.travel_fwd_min, bwd_q=l.fwd_q, oneway=True,
                bans=frozenset((t, FWD) for t, d in bans if d == FWD), group=l.group,
            )
        )
        new_links.append(
            replace(
                l, id=l.id + "<", from_=out_of(l.to), to=into(l.from_),
                travel_fwd_min=l.travel_bwd_min, fwd_q=l.bwd_q, oneway=True,
                bans=frozenset((t, FWD) for t, d in bans if d == BWD), group=l.group,
            )
        )
    return PhysicalNetwork(tuple(nodes), tuple(new_links), g, network.expanded | {SPLIT})


def subdivide_by_capacity(network: PhysicalNetwork) -> PhysicalNetwork:
    """Break every link of capacity ``d > 1`` into ``floor(d - 1) + 1``
    unit-capacity segments joined by dummy nodes.

    Segment durations are apportioned so they add up to the parent link's
    duration in instants.  Siding and loading links are left alone.
    """
    if SUBDIVIDED in network.expanded:
        return network
    links = _with_instants(network)
    bundles = _bundles(links)
    nodes = list(network.nodes)
    new_links: list[PhysLink] = []
    done: set[str] = set()
    for l in links:
        grp = l.group
        if grp in done:
            continue
        b = bundles.get(grp)
        if b is None or l.capacity <= 1 or l.kind in (SIDING, LOADING):
            new_links.append(l)
            continue
        done.add(grp)
        n_dummy = int(l.capacity - 1)  # floor(d - 1)
        base = grp.rstrip("<>")
        mids = [f"{base}/d{i}" for i in range(1, n_dummy + 1)]
        nodes.extend(PhysNode(m, DUMMY, origin=base) for m in mids)
        n = n_dummy + 1
        ids = [f"{base}/s{i}" for i in range(1, n + 1)]
        new_links.extend(_chain(b, mids, ids, ids, b.proto.kind, 1))
    return PhysicalNetwork(tuple(nodes), tuple(new_links), network.grid, network.expanded | {SUBDIVIDED})


def insert_siding_nodes(network: PhysicalNetwork) -> PhysicalNetwork:
    """Put a dwell node in the middle of every siding.

    Each direction's travel time is halved across the two halves, and both
    halves stay in the siding's group so the whole siding is still one
    unit of occupancy.
    """
    if SIDINGS in network.expanded:
        return network
    links = _with_instants(network)
    bundles = _bundles(links)
    nodes = list(network.nodes)
    new_links: list[PhysLink] = []
    done: set[str] = set()
    for l in links:
        grp = l.group
        if grp in done:
            continue
        b = bundles.get(grp)
        if b is None or l.kind != SIDING:
            new_links.append(l)
            continue
        done.add(grp)
        base = grp.rstrip("<>")
        mid = base + "'"
        nodes.append(PhysNode(mid, SIDING_NODE, origin=base))
        new_links.extend(_chain(b, [mid], [base + "/h1", base + "/h2"], [grp, grp], SIDING, 1))
    return PhysicalNetwork(tuple(nodes), tuple(new_links), network.grid, network.expanded | {SIDINGS})


def expand(network: PhysicalNetwork) -> PhysicalNetwork:
    return insert_siding_nodes(subdivide_by_capacity(split_loadouts(network)))


# --- time-space network -----------------------------------------------------


@dataclass(frozen=True)
class TsNode:
    id: int
    phys: str | None  # None for source/sink
    time: int | None
    kind: str  # "timed" | "source" | "sink"
    train: str | None = None

    @property
    def key(self) -> tuple:
        if self.kind == "timed":
            return (self.phys, self.time)
        if self.kind == "source":
            return ("<source>", self.train)
        return ("<sink>",)

    def label(self) -> str:
        if self.kind == "timed":
            return f"{self.phys}^{self.time}"
        if self.kind == "source":
            return f"s0[{self.train}]"
        return "s1"


@dataclass(frozen=True)
class TsArc:
    id: int
    tail: int
    head: int
    klass: str
    k: int | None  # tail instant, None at a source
    l: int | None  # head instant, None at the sink
    link: str | None = None
    direction: str | None = None
    group: str | None = None
    rep: int = 0  # index among parallel arcs
    train: str | None = None  # owner of starting / deferral arcs

    @property
    def duration(self) -> int:
        if self.k is None or self.l is None:
            return 0
        return self.l - self.k


@dataclass
class TimeSpaceNetwork:
    grid: TimeGrid
    expanded_phys: PhysicalNetwork
    trains: tuple[ModelTrain, ...]
    nodes: list[TsNode] = field(default_factory=list)
    arcs: list[TsArc] = field(default_factory=list)
    outb: list[list[int]] = field(default_factory=list)
    inb: list[list[int]] = field(default_factory=list)
    iden: dict[str, list[int]] = field(default_factory=dict)
    timed: dict[tuple[str, int], int] = field(default_factory=dict)
    sources: dict[str, int] = field(default_factory=dict)
    sink: int = -1
    dest_phys: dict[str, str] = field(default_factory=dict)
    dep_phys: dict[str, str] = field(default_factory=dict)

    def _add_node(self, phys, time, kind, train=None) -> int:
        node = TsNode(len(self.nodes), phys, time, kind, train)
        self.nodes.append(node)
        self.outb.append([])
        self.inb.append([])
        if kind == "timed":
            self.timed[(phys, time)] = node.id
        return node.id

    def _add_arc(self, tail: int, head: int, klass: str, **kw) -> TsArc:
        arc = TsArc(
            len(self.arcs), tail, head, klass,
            self.nodes[tail].time, self.nodes[head].time, **kw,
        )
        self.arcs.append(arc)
        self.outb[tail].append(arc.id)
        self.inb[head].append(arc.id)
        if klass == TRANSIT:
            self.iden.setdefault(arc.group, []).append(arc.id)  # type: ignore[arg-type]
        return arc

    def node_at(self, phys: str, time: int) -> int:
        return self.timed[(phys, time)]

    def arc_key(self, arc: TsArc) -> tuple:
        """Identity of an arc that survives rebuilding the network."""
        return (self.nodes[arc.tail].key, self.nodes[arc.head].key, arc.klass, arc.link, arc.rep)

    def counts(self) -> dict[str, int]:
        out = {"nodes": len(self.nodes), "timed_nodes": len(self.timed), "arcs": len(self.arcs)}
        for c in ARC_CLASSES:
            out[c] = 0
        for a in self.arcs:
            out[a.klass] += 1
        return out

    def arc_label(self, arc: TsArc) -> str:
        return f"{self.nodes[arc.tail].label()} -> {self.nodes[arc.head].label()}"

    def to_dot(self) -> str:
        """Graphviz DOT export, one node or edge per line."""
        lines = ["digraph tsnet {", "  rankdir=LR;"]
        for n in self.nodes:
            attrs = f'label="{n.label()}", kind="{n.kind}"'
            if n.kind == "timed":
                attrs += f', phys="{n.phys}", t={n.time}'
            lines.append(f"  n{n.id} [{attrs}];")
        for a in self.arcs:
            attrs = f'class="{a.klass}"'
            if a.link is not None:
                attrs += f', link="{a.link}", dir="{a.direction}", group="{a.group}"'
            if a.rep:
                attrs += f", rep={a.rep}"
            if a.train is not None:
                attrs += f', train="{a.train}"'
            lines.append(f"  n{a.tail} -> n{a.head} [{attrs}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_tsnet(
    network: PhysicalNetwork,
    grid: TimeGrid | None = None,
    trains: Sequence[ModelTrain] = (),
) -> TimeSpaceNetwork:
    """Lay the expanded network out over the time grid.

    Disappearing arcs leave every station node and every node that some
    model train departs from or is bound for, so a chained leg can always
    hand over to its successor at the predecessor's destination.
    """
    grid = grid or network.grid
    net = expand(network if network.grid == grid else network.with_grid(grid))
    last = grid.last
    tsn = TimeSpaceNetwork(grid, net, tuple(trains))

    phys_ids = [n.id for n in net.nodes]
    for t in trains:
        if t.dep_q > last or t.dep_q < 0:
            raise NetworkError(f"train {t.id}: dep_q={t.dep_q} outside grid 0..{last}")
        for role, node in (("departure", t.dep_node), ("destination", t.dest_node)):
            try:
                net.exit_node(node)
            except NetworkError:
                raise NetworkError(f"train {t.id}: {role} node {node!r} not in network") from None
        tsn.dep_phys[t.id] = net.exit_node(t.dep_node)
        tsn.dest_phys[t.id] = net.exit_node(t.dest_node)

    for p in phys_ids:
        for k in range(grid.horizon_instants):
            tsn._add_node(p, k, "timed")
    tsn.sink = tsn._add_node(None, None, "sink")
    for t in trains:
        tsn.sources[t.id] = tsn._add_node(None, None, "source", t.id)

    for link in net.links:
        directions = [(FWD, link.from_, link.to, link.fwd_q)]
        if not link.oneway:
            directions.append((BWD, link.to, link.from_, link.bwd_q))
        for d, a, b, q in directions:
            for k in range(0, last - q + 1):  # type: ignore[operator]
                tsn._add_arc(
                    tsn.timed[(a, k)], tsn.timed[(b, k + q)], TRANSIT,  # type: ignore[operator]
                    link=link.id, direction=d, group=link.group,
                )

    for n in net.nodes:
        if n.kind == SIDING_NODE:
            for k in range(last):
                tsn._add_arc(tsn.timed[(n.id, k)], tsn.timed[(n.id, k + 1)], WAITING)
    for n in net.nodes:
        if n.kind == LOADOUT_IN:
            for k in range(last):
                for r in range((n.loop_capacity or 1) - 1):
                    tsn._add_arc(tsn.timed[(n.id, k)], tsn.timed[(n.id, k + 1)], WAITING, rep=r)

    exits = {n.id for n in net.nodes if n.kind == STATION}
    exits |= set(tsn.dest_phys.values()) | set(tsn.dep_phys.values())
    for p in phys_ids:
        if p in exits:
            for k in range(grid.horizon_instants):
                tsn._add_arc(tsn.timed[(p, k)], tsn.sink, DISAPPEARING)

    for t in trains:
        src = tsn.sources[t.id]
        dep = tsn.dep_phys[t.id]
        ks = [t.dep_q] if t.fixed_start else range(t.dep_q, grid.horizon_instants)
        for k in ks:
            tsn._add_arc(src, tsn.timed[(dep, k)], STARTING, train=t.id)
        if t.chained:
            tsn._add_arc(src, tsn.sink, DEFERRAL, train=t.id)
    return tsn
