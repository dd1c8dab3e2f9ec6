import json

import pytest

from conftest import CASES, case_fleet, sample_network
from minerail.dispatch import Schedule, solve_offline
from minerail.replay import ReplayViolation, Violation, replay
from minerail.tsnet import expand


def offline(case):
    sched, _ = solve_offline(sample_network(), case_fleet(case))
    return sched


def mutate(sched, fn):
    doc = json.loads(sched.to_json())
    fn(doc["trains"])
    return Schedule.from_doc(doc)


@pytest.mark.parametrize("case", CASES)
def test_optimal_schedules_replay_clean(case):
    assert replay(offline(case), expand(sample_network())) == []


def test_two_trains_on_one_track():
    sched = offline(2)

    def clash(trains):
        a, b = trains["Mtest01"], trains["Mtest02"]
        # copy the first movement of one train onto the other
        b["movements"] = a["movements"][:1] + b["movements"]
    bad = replay(mutate(sched, clash), expand(sample_network()))
    kinds = {v.kind for v in bad}
    assert "track" in kinds


def test_node_shared_by_two_trains():
    sched = offline(2)

    def crowd(trains):
        a = trains["Mtest01"]["events"][0]
        trains["Mtest02"]["events"].append(dict(a))
    bad = replay(mutate(sched, crowd), expand(sample_network()))
    assert any(v.kind == "node" and v.where == "A" for v in bad)


def test_short_loading_flagged():
    net = sample_network()

    def rush(trains):
        for m in trains["Mtest01"]["movements"]:
            if m["kind"] == "loading":
                m["exit"] = m["enter"]
    bad = replay(mutate(offline(1), rush), expand(net))
    assert any(v.kind == "loading" for v in bad)


def test_teleport_is_a_continuity_error():
    def jump(trains):
        trains["Mtest01"]["movements"] = trains["Mtest01"]["movements"][1:]
    bad = replay(mutate(offline(1), jump), expand(sample_network()))
    assert bad and all(v.kind == "continuity" for v in bad)


def test_unknown_link():
    def bogus(trains):
        trains["Mtest01"]["movements"][0]["link"] = "nowhere"
    bad = replay(mutate(offline(1), bogus), expand(sample_network()))
    assert any(v.kind == "continuity" and v.where == "nowhere" for v in bad)


def test_up_to_ignores_later_conflicts():
    sched = offline(2)

    def late(trains):
        a = trains["Mtest01"]["events"][-1]
        trains["Mtest02"]["events"].append(dict(a))
    last = sched.trains["Mtest01"].events[-1].arrival
    m = mutate(sched, late)
    assert not [v for v in replay(m, expand(sample_network()), up_to=last - 1) if v.kind == "node"]
    assert [v for v in replay(m, expand(sample_network())) if v.kind == "node"]


def test_violation_message():
    err = ReplayViolation([Violation("track", "A-B", 3, ("X", "Y"))])
    assert "A-B" in str(err) and "X, Y" in str(err)
