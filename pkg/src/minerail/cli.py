"""Command-line entry point: ``minerail expand|solve|simulate|render|export-lp``.

Defaults for any flag can come from a JSON file named by ``--config`` or the
``MINERAIL_CONFIG`` environment variable; flags on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .dispatch import CycleConfig, Schedule, simulate, stitch
from .lpfile import export_lp, export_warm
from .mip import InfeasibleTrain, PenaltyConfig, build_model, preprocess
from .physnet import NetworkError, PhysicalNetwork, TimeGrid, load_fleet_file, load_network_file, validate_fleet
from .render import render_svg
from .replay import ReplayViolation, replay
from .solver import INFEASIBLE, TIMEOUT, SolverConfig, solve
from .tsnet import build_tsnet, expand

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_TIMEOUT = 4
EXIT_INTERNAL = 5

CONFIG_ENV = "MINERAIL_CONFIG"

log = logging.getLogger("minerail")

_DEFAULTS: dict[str, Any] = {
    "grid_g": None,
    "horizon": None,
    "alpha": 1.0,
    "beta": 10.0,
    "gamma": 1.0,
    "rho": 100.0,
    "big_m": None,
    "time_limit": 60.0,
    "cycle_min": 5,
    "cycles": None,
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minerail", description="Single-track rail dispatch planner.")
    p.add_argument("--config", help=f"JSON file of flag defaults (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, fleet: bool | None) -> None:
        sp.add_argument("--network", required=True, help="physical network JSON")
        if fleet is not None:
            sp.add_argument("--fleet", required=fleet, help="fleet JSON")
        sp.add_argument("--grid-g", type=int, help="instant length in minutes")
        sp.add_argument("--horizon", type=int, help="planning window in minutes")
        sp.add_argument("--out", help="output path (stdout when omitted)")

    def penalties(sp: argparse.ArgumentParser) -> None:
        for name in ("alpha", "beta", "gamma", "rho", "big-m"):
            sp.add_argument(f"--{name}", type=float)
        sp.add_argument("--time-limit", type=float, help="solver wall clock limit in seconds")

    sp = sub.add_parser("expand", help="build the time-space network and export it as DOT")
    common(sp, False)

    sp = sub.add_parser("solve", help="plan one window and write the schedule JSON")
    common(sp, True)
    penalties(sp)

    sp = sub.add_parser("simulate", help="run the rolling-horizon loop")
    common(sp, True)
    penalties(sp)
    sp.add_argument("--cycle-min", type=int, help="cycle length in minutes")
    sp.add_argument("--cycles", type=int, help="number of cycles (default: until done)")

    sp = sub.add_parser("render", help="draw a schedule as an SVG time-distance diagram")
    sp.add_argument("--schedule", required=True, help="schedule JSON")
    sp.add_argument("--network", required=True, help="physical network JSON")
    sp.add_argument("--title", default="")
    sp.add_argument("--out", help="output path (stdout when omitted)")

    sp = sub.add_parser("export-lp", help="write the binary program in LP format")
    common(sp, True)
    penalties(sp)
    sp.add_argument("--no-prune", action="store_true", help="skip pre-processing")
    sp.add_argument("--warm-out", help="also solve and write the solution as a warm-start file")
    return p


def _settings(args: argparse.Namespace) -> dict[str, Any]:
    out = dict(_DEFAULTS)
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"config {path}: expected a JSON object")
        for k, v in doc.items():
            key = k.replace("-", "_")
            if key not in out:
                raise UsageError(f"config {path}: unknown key {k!r}")
            out[key] = v
    for key in out:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _grid(network: PhysicalNetwork, s: dict[str, Any]) -> TimeGrid:
    g = s["grid_g"] or network.grid.instant_len_min
    if s["horizon"] is not None:
        return TimeGrid.for_window(int(s["horizon"]), int(g))
    if g == network.grid.instant_len_min:
        return network.grid
    window = (network.grid.horizon_instants - 1) * network.grid.instant_len_min
    return TimeGrid.for_window(window, int(g))


def _penalties(s: dict[str, Any]) -> PenaltyConfig:
    return PenaltyConfig(
        gamma=float(s["gamma"]), alpha=float(s["alpha"]), beta=float(s["beta"]),
        rho=float(s["rho"]), big_m=None if s["big_m"] is None else float(s["big_m"]),
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(args: argparse.Namespace, s: dict[str, Any]):
    net = load_network_file(args.network)
    grid = _grid(net, s)
    net = net.with_grid(grid)
    fleet = load_fleet_file(args.fleet, grid) if getattr(args, "fleet", None) else []
    return net, grid, validate_fleet(fleet, net, grid)


def cmd_expand(args: argparse.Namespace, s: dict[str, Any]) -> int:
    net, grid, legs = _load(args, s)
    tsn = build_tsnet(net, grid, legs)
    _emit(tsn.to_dot(), args.out)
    counts = tsn.counts()
    print(" ".join(f"{k}={counts[k]}" for k in sorted(counts)), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def _model(args, s):
    net, grid, legs = _load(args, s)
    tsn = build_tsnet(net, grid, legs)
    model = build_model(tsn, legs, _penalties(s), grid)
    if not getattr(args, "no_prune", False):
        model = preprocess(model)
    return net, legs, model


def _status_code(status: str) -> int:
    return {INFEASIBLE: EXIT_INFEASIBLE, TIMEOUT: EXIT_TIMEOUT}.get(status, EXIT_OK)


def cmd_solve(args: argparse.Namespace, s: dict[str, Any]) -> int:
    net, legs, model = _model(args, s)
    sol = solve(model, SolverConfig(time_limit_s=float(s["time_limit"])))
    sched = stitch(sol, legs)
    if sol.has_incumbent:
        bad = replay(sched, expand(net))
        if bad:
            raise ReplayViolation(bad)
    _emit(sched.to_json(), args.out)
    summary = f"status={sol.status} objective={sched.to_doc()['objective']} vars={model.n_vars}"
    if sol.diagnostic:
        summary += f" diagnostic={sol.diagnostic!r}"
    print(summary, file=sys.stderr)
    return _status_code(sol.status)


def cmd_simulate(args: argparse.Namespace, s: dict[str, Any]) -> int:
    net, grid, legs = _load(args, s)
    config = CycleConfig(
        cycle_len_min=int(s["cycle_min"]),
        horizon_instants=grid.horizon_instants,
        penalties=_penalties(s),
        solver=SolverConfig(time_limit_s=float(s["time_limit"])),
    )
    config.grid(net)  # validates the cycle length
    cycles = None if s["cycles"] is None else int(s["cycles"])
    result = simulate(net, legs, config, cycles=cycles)
    doc = {
        "plans": [p.to_doc() for p in result.plans],
        "final_state": result.final.to_doc(),
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out and Path(args.out).suffix != ".json":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(result.plans):
            (out / f"plan-{i:03d}.json").write_text(p.to_json(), encoding="utf-8")
        (out / "final-state.json").write_text(result.final.to_json(), encoding="utf-8")
    else:
        _emit(text, args.out)
    final = result.final
    print(
        f"cycles={len(result.states) - 1} plans={len(result.plans)} completed={len(final.completed)} "
        f"cancelled={len(final.cancelled)} pending={len(final.pending_legs)}",
        file=sys.stderr,
    )
    last = result.plans[-1] if result.plans else None
    return _status_code(last.status) if last is not None else EXIT_OK


def cmd_render(args: argparse.Namespace, s: dict[str, Any]) -> int:
    net = load_network_file(args.network)
    try:
        doc = json.loads(Path(args.schedule).read_text(encoding="utf-8"))
        sched = Schedule.from_doc(doc)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"schedule {args.schedule}: {exc}") from exc
    _emit(render_svg(sched, net, args.title), args.out)
    return EXIT_OK


def cmd_export_lp(args: argparse.Namespace, s: dict[str, Any]) -> int:
    _, _, model = _model(args, s)
    _emit(export_lp(model), args.out)
    if args.warm_out:
        sol = solve(model, SolverConfig(time_limit_s=float(s["time_limit"])))
        Path(args.warm_out).write_text(export_warm(model, sol.values), encoding="utf-8")
        return _status_code(sol.status)
    return EXIT_OK


COMMANDS = {
    "expand": cmd_expand,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "render": cmd_render,
    "export-lp": cmd_export_lp,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = _settings(args)
        return COMMANDS[args.command](args, settings)
    except (UsageError, NetworkError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InfeasibleTrain as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ReplayViolation as exc:
        print(f"internal: replay found conflicts: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AssertionError as exc:
        print(f"internal: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
