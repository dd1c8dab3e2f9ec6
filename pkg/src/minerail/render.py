"""Time-distance diagram of a schedule as SVG."""

from __future__ import annotations

import colorsys
import heapq
from xml.sax.saxutils import escape

from .dispatch import Schedule
from .physnet import DUMMY, SIDING, SIDING_NODE, PhysicalNetwork
from .tsnet import expand

BASE_COLORS = ("#2ca02c", "#1f77b4", "#ff7f0e")

WIDTH, HEIGHT = 900, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 110, 30, 30, 50


def train_color(i: int) -> str:
    if i < len(BASE_COLORS):
        return BASE_COLORS[i]
    hue = ((i - len(BASE_COLORS)) * 0.618033988749895 + 0.9) % 1.0
    r, g, b = colorsys.hls_to_rgb(hue, 0.45, 0.65)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def corridor_positions(network: PhysicalNetwork) -> dict[str, float]:
    """Vertical position of every node of an expanded network.

    Distance in minutes from the first listed node along everything but
    sidings; a siding node sits halfway between the two nodes it joins.
    """
    adj: dict[str, list[tuple[str, float]]] = {n.id: [] for n in network.nodes}
    side: dict[str, list[str]] = {}
    for l in network.links:
        if l.kind == SIDING:
            for a, b in ((l.from_, l.to), (l.to, l.from_)):
                if network.node(a).kind == SIDING_NODE:
                    side.setdefault(a, []).append(b)
            continue
        w = min(l.travel_fwd_min, l.travel_bwd_min)
        adj[l.from_].append((l.to, w))
        adj[l.to].append((l.from_, w))
    root = network.nodes[0].id
    dist = {root: 0.0}
    heap = [(0.0, root)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in sorted(adj[u]):
            if d + w < dist.get(v, float("inf")):
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    far = max(dist.values(), default=0.0) + 1
    for node, ends in sorted(side.items()):
        known = [dist[e] for e in ends if e in dist]
        if known:
            dist[node] = sum(known) / len(known)
    return {n.id: dist.get(n.id, far) for n in network.nodes}


def render_svg(schedule: Schedule, network: PhysicalNetwork, title: str = "") -> str:
    """One polyline per real train; x is time, y is distance along the line."""
    network = expand(network)
    ypos = corridor_positions(network)
    for ts in schedule.trains.values():
        for e in ts.events:
            if e.node not in ypos:
                raise ValueError(f"schedule for {ts.name} visits unknown node {e.node!r}")
    g = schedule.instant_len_min
    t0 = schedule.clock * g
    t1 = (schedule.clock + schedule.horizon_instants - 1) * g
    for ts in schedule.trains.values():
        for e in ts.events:
            t1 = max(t1, e.departure * g)
    span_t = max(t1 - t0, g)
    span_y = max(max(ypos.values(), default=0.0), 1.0)
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def x(t: float) -> str:
        return f"{MARGIN_L + (t - t0) / span_t * pw:.2f}"

    def y(node: str) -> str:
        return f"{MARGIN_T + ypos.get(node, 0.0) / span_y * ph:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="18" text-anchor="middle">{escape(title)}</text>')
    for n in network.nodes:
        if n.kind == DUMMY:
            continue
        out.append(
            f'<line x1="{MARGIN_L}" y1="{y(n.id)}" x2="{WIDTH - MARGIN_R}" y2="{y(n.id)}" '
            f'stroke="#ddd" stroke-width="1"/>'
        )
        out.append(f'<text x="{MARGIN_L - 6}" y="{y(n.id)}" text-anchor="end" dy="4">{escape(n.id)}</text>')
    for q in range(schedule.clock, schedule.clock + schedule.horizon_instants):
        t = q * g
        out.append(
            f'<line x1="{x(t)}" y1="{MARGIN_T}" x2="{x(t)}" y2="{HEIGHT - MARGIN_B}" stroke="#eee"/>'
        )
        out.append(f'<text x="{x(t)}" y="{HEIGHT - MARGIN_B + 16}" text-anchor="middle">{t}</text>')
    out.append(
        f'<text x="{MARGIN_L + pw / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">time (min)</text>'
    )

    for i, name in enumerate(sorted(schedule.trains)):
        ts = schedule.trains[name]
        if not ts.events:
            continue
        color = train_color(i)
        pts = []
        for e in ts.events:
            pts.append(f"{x(e.arrival * g)},{y(e.node)}")
            if e.departure != e.arrival:
                pts.append(f"{x(e.departure * g)},{y(e.node)}")
        dash = ' stroke-dasharray="6,3"' if ts.cancelled else ""
        out.append(
            f'<polyline data-train="{escape(name)}" points="{" ".join(pts)}" fill="none" '
            f'stroke="{color}" stroke-width="2"{dash}/>'
        )
        first = ts.events[0]
        out.append(
            f'<text x="{x(first.arrival * g)}" y="{y(first.node)}" dy="-5" fill="{color}">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
