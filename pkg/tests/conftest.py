from __future__ import annotations

import json
import sys
from importlib.resources import files
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from minerail.mip import build_model, preprocess  # noqa: E402
from minerail.physnet import load_fleet, load_network, validate_fleet  # noqa: E402
from minerail.tsnet import build_tsnet  # noqa: E402

DATA = files("minerail") / "data"
CASES = (1, 2, 3, 4)


def data_text(name: str) -> str:
    return (DATA / name).read_text(encoding="utf-8")


def data_path(name: str) -> str:
    return str(DATA / name)


def sample_network():
    return load_network(data_text("sample-network.json"))


def case_fleet(case: int, network=None):
    network = network or sample_network()
    return load_fleet(json.loads(data_text(f"case{case}.json")), network.grid)


def pipeline(network, fleet, penalties=None, prune=True, grid=None):
    grid = grid or network.grid
    legs = validate_fleet(fleet, network, grid)
    tsn = build_tsnet(network, grid, legs)
    model = build_model(tsn, legs, penalties, grid)
    return legs, tsn, (preprocess(model) if prune else model)


@pytest.fixture
def sample():
    return sample_network()


ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
