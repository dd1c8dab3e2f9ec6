"""Physical railway network, time grid and train fleet.

A network document is JSON with ``nodes``, ``links`` and ``grid`` keys; a
fleet document is a JSON list of trains.  Both are validated on load and
turned into immutable dataclasses.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

STATION = "station"
LOADOUT = "loadout"
# created by expansion only
LOADOUT_IN = "loadout_in"
LOADOUT_OUT = "loadout_out"
SIDING_NODE = "siding"
DUMMY = "dummy"

INPUT_NODE_KINDS = (STATION, LOADOUT)

MAINLINE = "mainline"
SIDING = "siding"
CROSSOVER = "crossover"
LOADING = "loading"  # loadout-internal, expansion only

INPUT_LINK_KINDS = (MAINLINE, SIDING, CROSSOVER)

FWD = "fwd"
BWD = "bwd"
BOTH = "both"


class NetworkError(ValueError):
    """Raised for any invalid network, grid or fleet document."""


@dataclass(frozen=True)
class TimeGrid:
    instant_len_min: int
    horizon_instants: int

    def __post_init__(self) -> None:
        if not isinstance(self.instant_len_min, int) or self.instant_len_min <= 0:
            raise NetworkError("grid.instant_len_min must be a positive integer")
        if 60 % self.instant_len_min:
            raise NetworkError(
                f"grid.instant_len_min={self.instant_len_min} must divide 60"
            )
        if not isinstance(self.horizon_instants, int) or self.horizon_instants < 2:
            raise NetworkError("grid.horizon_instants must be an integer >= 2")

    @property
    def last(self) -> int:
        return self.horizon_instants - 1

    @property
    def per_hour(self) -> int:
        return 60 // self.instant_len_min

    def to_instants(self, minutes: float) -> int:
        """Round a duration up to whole instants, never below one."""
        return max(1, math.ceil(minutes / self.instant_len_min - 1e-9))

    @classmethod
    def for_window(cls, window_min: int, instant_len_min: int) -> "TimeGrid":
        # a window of W minutes spans instants 0..W/g inclusive
        return cls(instant_len_min, window_min // instant_len_min + 1)


@dataclass(frozen=True)
class PhysNode:
    id: str
    kind: str
    loading_time_min: float | None = None
    loop_capacity: int | None = None
    # for expansion-created nodes, the input node they stand for
    origin: str | None = None


@dataclass(frozen=True)
class LoadOut:
    node: str
    loading_time_min: float
    loop_capacity: int

    def __post_init__(self) -> None:
        if not self.loading_time_min > 0:
            raise NetworkError(f"load-out {self.node}: loading_time_min must be > 0")
        if self.loop_capacity < 1:
            raise NetworkError(f"load-out {self.node}: loop_capacity must be >= 1")


@dataclass(frozen=True)
class PhysLink:
    """A track between two nodes.

    ``bans`` holds ``(tag, direction)`` pairs relative to this link's own
    orientation.  ``oneway`` links are only traversable from -> to.  Links
    that stand for the same piece of physical track share a ``group``.
    ``fwd_q``/``bwd_q`` are durations in instants, fixed during expansion.
    """

    id: str
    from_: str
    to: str
    kind: str
    capacity: float
    travel_fwd_min: float
    travel_bwd_min: float
    bans: frozenset[tuple[str, str]] = frozenset()
    oneway: bool = False
    group: str = ""
    fwd_q: int | None = None
    bwd_q: int | None = None

    def __post_init__(self) -> None:
        if not self.group:
            object.__setattr__(self, "group", self.id)

    @property
    def ends(self) -> tuple[str, str]:
        return (self.from_, self.to)

    def banned(self, tags: Iterable[str], direction: str) -> bool:
        tags = set(tags)
        for tag, d in self.bans:
            if tag in tags and d in (direction, BOTH):
                return True
        return False

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "id": self.id,
            "from": self.from_,
            "to": self.to,
            "kind": self.kind,
            "capacity": self.capacity,
            "travel_fwd_min": self.travel_fwd_min,
            "travel_bwd_min": self.travel_bwd_min,
        }
        if self.bans:
            doc["bans"] = [{"tag": t, "direction": d} for t, d in sorted(self.bans)]
        return doc


@dataclass(frozen=True)
class PhysicalNetwork:
    nodes: tuple[PhysNode, ...]
    links: tuple[PhysLink, ...]
    grid: TimeGrid
    # set by the expansion passes
    expanded: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        dup = [k for k, c in Counter(ids).items() if c > 1]
        if dup:
            raise NetworkError(f"duplicate node id(s): {', '.join(sorted(dup))}")
        lids = [l.id for l in self.links]
        dup = [k for k, c in Counter(lids).items() if c > 1]
        if dup:
            raise NetworkError(f"duplicate link id(s): {', '.join(sorted(dup))}")
        known = set(ids)
        for link in self.links:
            for end in link.ends:
                if end not in known:
                    raise NetworkError(f"link {link.id}: unknown node {end!r}")
            if link.from_ == link.to:
                raise NetworkError(f"link {link.id}: self-loop")
            if not (link.travel_fwd_min > 0 and link.travel_bwd_min > 0):
                raise NetworkError(f"link {link.id}: travel times must be > 0")
            if link.kind in (MAINLINE, SIDING) and link.capacity < 1:
                raise NetworkError(f"link {link.id}: capacity must be >= 1")
            if link.capacity <= 0:
                raise NetworkError(f"link {link.id}: capacity must be > 0")
        for node in self.nodes:
            if node.kind == LOADOUT:
                # validates loading time and loop capacity
                LoadOut(node.id, node.loading_time_min or 0, node.loop_capacity or 0)
        if self.nodes and not _connected(ids, self.links):
            raise NetworkError("network graph is disconnected")

    # lookups are rebuilt on demand; networks are small
    def node(self, node_id: str) -> PhysNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise NetworkError(f"unknown node {node_id!r}")

    def link(self, link_id: str) -> PhysLink:
        for l in self.links:
            if l.id == link_id:
                return l
        raise NetworkError(f"unknown link {link_id!r}")

    def has_node(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)

    def nodes_of(self, *kinds: str) -> list[PhysNode]:
        return [n for n in self.nodes if n.kind in kinds]

    @property
    def stations(self) -> list[str]:
        return [n.id for n in self.nodes_of(STATION)]

    @property
    def loadouts(self) -> dict[str, LoadOut]:
        return {
            n.id: LoadOut(n.id, n.loading_time_min, n.loop_capacity)  # type: ignore[arg-type]
            for n in self.nodes_of(LOADOUT)
        }

    def entry_node(self, node_id: str) -> str:
        """Node a train arrives at when heading to ``node_id``."""
        if self.has_node(node_id):
            return node_id
        if self.has_node(node_id + ".in"):
            return node_id + ".in"
        raise NetworkError(f"unknown node {node_id!r}")

    def exit_node(self, node_id: str) -> str:
        """Node a train occupies after finishing at ``node_id``.

        For a split load-out this is the exit node, so the loading link is
        part of the inbound leg.
        """
        if self.has_node(node_id):
            return node_id
        if self.has_node(node_id + ".out"):
            return node_id + ".out"
        raise NetworkError(f"unknown node {node_id!r}")

    def to_doc(self) -> dict[str, Any]:
        nodes = []
        for n in self.nodes:
            d: dict[str, Any] = {"id": n.id, "kind": n.kind}
            if n.loading_time_min is not None:
                d["loading_time_min"] = n.loading_time_min
            if n.loop_capacity is not None:
                d["loop_capacity"] = n.loop_capacity
            nodes.append(d)
        return {
            "nodes": nodes,
            "links": [l.to_doc() for l in self.links],
            "grid": {
                "instant_len_min": self.grid.instant_len_min,
                "horizon_instants": self.grid.horizon_instants,
            },
        }

    def with_grid(self, grid: TimeGrid) -> "PhysicalNetwork":
        if self.expanded:
            raise NetworkError("cannot change the grid of an expanded network")
        return replace(self, grid=grid)


def _connected(ids: Sequence[str], links: Iterable[PhysLink]) -> bool:
    adj: dict[str, set[str]] = {i: set() for i in ids}
    for l in links:
        adj[l.from_].add(l.to)
        adj[l.to].add(l.from_)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(ids)


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise NetworkError(f"{where}: missing field {key!r}")
    return doc[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkError(f"{where}: expected a number, got {value!r}")
    return value


def load_network(document: str | Mapping[str, Any]) -> PhysicalNetwork:
    """Parse and validate a network document (JSON text or decoded dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"network document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise NetworkError("network document must be a JSON object")

    grid_doc = _require(doc, "grid", "network")
    grid = TimeGrid(
        _require(grid_doc, "instant_len_min", "grid"),
        _require(grid_doc, "horizon_instants", "grid"),
    )

    nodes = []
    for i, nd in enumerate(_require(doc, "nodes", "network")):
        where = f"nodes[{i}]"
        node_id = str(_require(nd, "id", where))
        kind = _require(nd, "kind", where)
        if kind not in INPUT_NODE_KINDS:
            raise NetworkError(f"{where}: kind must be one of {INPUT_NODE_KINDS}, got {kind!r}")
        if kind == LOADOUT:
            lt = _number(_require(nd, "loading_time_min", where), where + ".loading_time_min")
            cap = nd.get("loop_capacity", 1)
            if isinstance(cap, bool) or not isinstance(cap, int):
                raise NetworkError(f"{where}.loop_capacity: expected an integer")
            nodes.append(PhysNode(node_id, kind, float(lt), cap))
        else:
            nodes.append(PhysNode(node_id, kind))

    links = []
    for i, ld in enumerate(_require(doc, "links", "network")):
        where = f"links[{i}]"
        a = str(_require(ld, "from", where))
        b = str(_require(ld, "to", where))
        kind = _require(ld, "kind", where)
        if kind not in INPUT_LINK_KINDS:
            raise NetworkError(f"{where}: kind must be one of {INPUT_LINK_KINDS}, got {kind!r}")
        cap = _number(_require(ld, "capacity", where), where + ".capacity")
        fwd = _number(_require(ld, "travel_fwd_min", where), where + ".travel_fwd_min")
        bwd = _number(_require(ld, "travel_bwd_min", where), where + ".travel_bwd_min")
        if fwd <= 0 or bwd <= 0:
            raise NetworkError(f"{where}: travel times must be > 0")
        if cap <= 0:
            raise NetworkError(f"{where}: capacity must be > 0")
        if kind == CROSSOVER and cap != 1:
            logger.warning("%s: crossover treated as capacity-1 mainline", where)
            cap = 1
        bans = set()
        for j, bd in enumerate(ld.get("bans", ())):
            tag = str(_require(bd, "tag", f"{where}.bans[{j}]"))
            direction = bd.get("direction", BOTH)
            if direction not in (FWD, BWD, BOTH):
                raise NetworkError(f"{where}.bans[{j}]: bad direction {direction!r}")
            bans.add((tag, direction))
        links.append(
            PhysLink(
                id=str(ld.get("id", f"{a}-{b}")),
                from_=a,
                to=b,
                kind=kind,
                capacity=cap,
                travel_fwd_min=fwd,
                travel_bwd_min=bwd,
                bans=frozenset(bans),
            )
        )
    return PhysicalNetwork(tuple(nodes), tuple(links), grid)


def load_network_file(path: str | Path) -> PhysicalNetwork:
    return load_network(Path(path).read_text(encoding="utf-8"))


def dump_network(network: PhysicalNetwork) -> str:
    return json.dumps(network.to_doc(), indent=2, sort_keys=True)


# --- trains -----------------------------------------------------------------


@dataclass(frozen=True)
class RealTrain:
    name: str
    dep_loc: str
    dep_time: int
    loadout_seq: tuple[str, ...] = ()
    # explicit single-leg form: a train row with a destination
    dest: str | None = None
    tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ModelTrain:
    """One directed leg of a real train's journey.

    ``dep_node``/``dest_node`` name input nodes; load-outs are mapped to
    their entry/exit nodes when the time-space network is built.
    ``fixed_start`` pins departure to exactly ``dep_q`` (a train already in
    motion when it is re-planned).
    """

    id: str
    real_train: str
    dep_q: int
    dep_node: str
    dest_node: str
    predecessor: str | None = None
    tags: frozenset[str] = frozenset()
    fixed_start: bool = False

    @property
    def chained(self) -> bool:
        return self.predecessor is not None


def train_tags(network: PhysicalNetwork, dep: str, dest: str, extra: Iterable[str] = ()) -> frozenset[str]:
    """Tags used to match link bans: ``any``, ``empty`` when heading to a
    load-out, ``loaded`` when leaving one, plus any user tags."""
    tags = {"any", *extra}
    loadouts = {n.id for n in network.nodes_of(LOADOUT)}
    if dest in loadouts:
        tags.add("empty")
    if dep in loadouts:
        tags.add("loaded")
    return frozenset(tags)


def decompose_train(train: RealTrain, network: PhysicalNetwork) -> list[ModelTrain]:
    """Split a real train into model-train legs.

    With ``n`` load-outs the journey becomes ``n + 1`` legs: one to each
    load-out in turn and a final one back to the departure location.  Every
    leg carries the real departure time as its earliest departure; the
    actual start of a later leg is tied to its predecessor's arrival.
    """
    if not network.has_node(train.dep_loc):
        raise NetworkError(f"train {train.name}: unknown departure node {train.dep_loc!r}")
    if train.dest is not None:
        if not network.has_node(train.dest):
            raise NetworkError(f"train {train.name}: unknown destination {train.dest!r}")
        stops = [train.dep_loc, train.dest]
    else:
        loadouts = network.loadouts
        for lo in train.loadout_seq:
            if lo not in loadouts:
                raise NetworkError(f"train {train.name}: {lo!r} is not a load-out")
        if not train.loadout_seq:
            raise NetworkError(f"train {train.name}: needs a destination or a load-out sequence")
        stops = [train.dep_loc, *train.loadout_seq, train.dep_loc]

    legs = []
    prev = None
    for k, (a, b) in enumerate(zip(stops, stops[1:]), start=1):
        leg_id = f"{train.name}#{k}"
        legs.append(
            ModelTrain(
                id=leg_id,
                real_train=train.name,
                dep_q=train.dep_time,
                dep_node=a,
                dest_node=b,
                predecessor=prev,
                tags=train_tags(network, a, b, train.tags),
            )
        )
        prev = leg_id
    return legs


def validate_fleet(
    trains: Sequence[RealTrain], network: PhysicalNetwork, grid: TimeGrid | None = None
) -> list[ModelTrain]:
    grid = grid or network.grid
    names = Counter(t.name for t in trains)
    dup = sorted(n for n, c in names.items() if c > 1)
    if dup:
        raise NetworkError(f"duplicate train name(s): {', '.join(dup)}")
    out: list[ModelTrain] = []
    for t in trains:
        if not 0 <= t.dep_time < grid.horizon_instants:
            raise NetworkError(
                f"train {t.name}: dep_q={t.dep_time} outside grid 0..{grid.last}"
            )
        try:
            out.extend(decompose_train(t, network))
        except NetworkError as exc:
            msg = str(exc)
            if not msg.startswith(f"train {t.name}"):
                msg = f"train {t.name}: {msg}"
            raise NetworkError(msg) from exc
    return out


def load_fleet(document: str | Sequence[Mapping[str, Any]], grid: TimeGrid | None = None) -> list[RealTrain]:
    """Parse a fleet document.

    Each row has ``name``, ``dep_node`` and ``dep_q`` plus either
    ``dest_node`` (one explicit leg) or ``loadout_seq``.  ``dep_time_min``
    may replace ``dep_q`` when ``grid`` is given.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"fleet document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, list):
        raise NetworkError("fleet document must be a JSON list")
    trains = []
    for i, row in enumerate(doc):
        where = f"fleet[{i}]"
        name = str(_require(row, "name", where))
        dep = str(_require(row, "dep_node", where))
        if "dep_q" in row:
            dep_q = row["dep_q"]
        elif "dep_time_min" in row and grid is not None:
            dep_q = math.ceil(_number(row["dep_time_min"], where) / grid.instant_len_min)
        else:
            raise NetworkError(f"{where}: missing field 'dep_q'")
        if isinstance(dep_q, bool) or not isinstance(dep_q, int) or dep_q < 0:
            raise NetworkError(f"{where}.dep_q: expected a nonnegative integer")
        has_dest = "dest_node" in row
        has_seq = "loadout_seq" in row
        if has_dest == has_seq:
            raise NetworkError(f"{where}: give exactly one of 'dest_node' or 'loadout_seq'")
        trains.append(
            RealTrain(
                name=name,
                dep_loc=dep,
                dep_time=dep_q,
                loadout_seq=tuple(str(x) for x in row.get("loadout_seq", ())),
                dest=str(row["dest_node"]) if has_dest else None,
                tags=frozenset(str(x) for x in row.get("tags", ())),
            )
        )
    return trains


def load_fleet_file(path: str | Path, grid: TimeGrid | None = None) -> list[RealTrain]:
    return load_fleet(Path(path).read_text(encoding="utf-8"), grid)
