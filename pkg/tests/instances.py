"""Seeded random instances small enough for the brute-force oracle."""

from __future__ import annotations

import random
from dataclasses import dataclass

from minerail.physnet import PhysicalNetwork, RealTrain, load_fleet, load_network


@dataclass
class Instance:
    seed: int
    network: PhysicalNetwork
    fleet: list[RealTrain]


def network_doc(rng: random.Random, max_nodes: int = 10, max_q: int = 8) -> dict:
    n_st = rng.randint(2, 4)
    n_lo = rng.randint(1, 2)
    nodes = [{"id": f"S{i}", "kind": "station"} for i in range(n_st)]
    links = []
    for i in range(n_st - 1):
        links.append({
            "from": f"S{i}", "to": f"S{i + 1}", "kind": "mainline",
            "capacity": rng.choice([1, 1, 1, 2]),
            "travel_fwd_min": 5 * rng.randint(1, 2), "travel_bwd_min": 5 * rng.randint(1, 2),
        })
        if rng.random() < 0.35:
            links.append({
                "id": f"S{i}-S{i + 1}.sd", "from": f"S{i}", "to": f"S{i + 1}", "kind": "siding",
                "capacity": 1, "travel_fwd_min": 10, "travel_bwd_min": 10,
            })
    for j in range(n_lo):
        nodes.append({
            "id": f"L{j}", "kind": "loadout",
            "loading_time_min": rng.choice([5, 5, 10]), "loop_capacity": rng.choice([1, 2]),
        })
        links.append({
            "from": f"S{rng.randrange(n_st)}", "to": f"L{j}", "kind": "mainline", "capacity": 1,
            "travel_fwd_min": 5, "travel_bwd_min": 5,
        })
    if rng.random() < 0.3:
        ld = rng.choice(links)
        ld["bans"] = [{"tag": "loaded", "direction": rng.choice(["fwd", "bwd"])}]
    assert len(nodes) <= max_nodes
    return {"grid": {"instant_len_min": 5, "horizon_instants": rng.randint(4, max_q)},
            "nodes": nodes, "links": links}


def fleet_doc(rng: random.Random, net: dict, max_trains: int = 3) -> list[dict]:
    stations = [n["id"] for n in net["nodes"] if n["kind"] == "station"]
    loadouts = [n["id"] for n in net["nodes"] if n["kind"] == "loadout"]
    last = net["grid"]["horizon_instants"] - 1
    out = []
    for k in range(rng.randint(1, max_trains)):
        dep_q = rng.randint(0, min(2, last))
        r = rng.random()
        if r < 0.25:
            row = {"dep_node": rng.choice(stations), "loadout_seq": [rng.choice(loadouts)]}
        elif r < 0.65:
            row = {"dep_node": rng.choice(stations), "dest_node": rng.choice(loadouts)}
        else:
            row = {"dep_node": rng.choice(loadouts + stations), "dest_node": rng.choice(stations)}
            if row["dep_node"] == row["dest_node"]:
                row["dest_node"] = next(s for s in stations if s != row["dep_node"])
        out.append({"name": f"T{k}", "dep_q": dep_q, **row})
    return out


def random_instance(seed: int) -> Instance:
    rng = random.Random(seed)
    net_doc = network_doc(rng)
    fleet = fleet_doc(rng, net_doc)
    network = load_network(net_doc)
    return Instance(seed, network, load_fleet(fleet, network.grid))


@dataclass
class Prepared:
    instance: Instance
    full: object  # unpruned MipModel
    model: object  # pruned MipModel


def corpus(n: int, first_seed: int = 0, max_product: int = 200_000) -> list[Prepared]:
    """The first ``n`` seeds whose pruned model is small enough to enumerate."""
    from minerail.mip import build_model, preprocess
    from minerail.physnet import validate_fleet
    from minerail.solver import path_count_product
    from minerail.tsnet import build_tsnet

    out: list[Prepared] = []
    seed = first_seed
    while len(out) < n:
        inst = random_instance(seed)
        seed += 1
        legs = validate_fleet(inst.fleet, inst.network)
        full = build_model(build_tsnet(inst.network, inst.network.grid, legs), legs)
        model = preprocess(full)
        if path_count_product(model) <= max_product:
            out.append(Prepared(inst, full, model))
    return out
