"""Command-line front end.

Exit codes: 0 success, 1 reference-check mismatch, 2 scenario error or
missing file, 3 run aborted or analysis failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import OmegaSimError, RunAbortedError, ScenarioError

log = logging.getLogger("omegasim")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emit(args, payload: dict, text: str | None = None, name: str = "report.json"):
    body = json.dumps(payload, indent=2) + "\n"
    if args.out:
        _write(Path(args.out) / name, body)
    sys.stdout.write(body if args.json or text is None else text)


def cmd_run(args) -> int:
    from .engine import load_scenario, run_batch

    scenarios = [load_scenario(p) for p in args.scenario]
    seeds = args.seed if args.seed else [None]
    jobs = [(sc, s if s is not None else sc.get("RUN", "seed")) for sc in scenarios for s in seeds]
    outs = run_batch(jobs, args.jobs)
    out_dir = Path(args.out or ".")
    single = len(outs) == 1
    for o in outs:
        d = out_dir if single else out_dir / f"{o.name}-seed{o.seed}"
        _write(d / "trace.csv", o.trace_csv)
        _write(d / "summary.json", o.summary_json)
        _write(d / "channels.csv", o.ledger_csv)
        sys.stdout.write(o.summary_json if single else f"{d}: {json.loads(o.summary_json)}\n")
    return 0


def cmd_analyze(args) -> int:
    from .engine import analyze, load_scenario

    report = analyze(load_scenario(args.scenario), budget=args.budget)
    _emit(args, report, None, "analysis.json")
    return 0


def cmd_reachability(args) -> int:
    from .engine import load_scenario, reachability_experiment

    rows = reachability_experiment(load_scenario(args.scenario), args.budget or None, args.theta)
    lines = ["budget,reachable,steps,wall_ticks"]
    for r in rows:
        lines.append(",".join(str(v) if v is not None else "" for v in
                              (r.budget, str(r.reachable).lower(), r.steps, r.wall_ticks)))
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out) / "reachability.csv", csv_text)
    if args.json:
        sys.stdout.write(json.dumps([r.to_json() for r in rows], indent=2) + "\n")
    else:
        sys.stdout.write(csv_text)
    return 0


def cmd_safety(args) -> int:
    from .engine import load_scenario, safety_report

    m = safety_report(load_scenario(args.scenario))
    payload = {"h_k": m.h_k, "h_kp": m.h_kp, "R": m.R, "S": m.S, "no_hazard": m.no_hazard}
    text = "no hazard: the illegal set is empty\n" if m.no_hazard else None
    _emit(args, payload, text, "safety.json")
    return 0


def cmd_decompose(args) -> int:
    from .engine import build_world, load_scenario
    from .errors import ImpermissibleDecompositionError
    from .omega import Configurator, compose, dec_p

    world = build_world(load_scenario(args.scenario))
    plant, repo = world.plant, world.repo
    unit = compose(repo, Configurator(address_bits=repo.address_bits), plant, channels=world.channels)
    names = list(plant.space.names)
    k = args.ways
    if k < 1 or k > len(names):
        raise ScenarioError(f"--ways must lie in 1..{len(names)}")
    cuts = [len(names) * j // k for j in range(k + 1)]
    frags = [names[cuts[j]:cuts[j + 1]] for j in range(k)]
    probe = [("deploy", a) for a in repo.addresses[:4]] + [None]
    try:
        _, rep = dec_p(unit, frags, probe)
        payload = rep.to_json() | {k: v for k, v in rep.details.items()}
    except ImpermissibleDecompositionError as exc:
        payload = exc.report.to_json() | {k: v for k, v in exc.report.details.items()}
    _emit(args, payload, None, "decomposition.json")
    return 0


def cmd_paper_check(args) -> int:
    from .engine import load_scenario
    from .engine.checks import reference_checks

    overrides = {}
    if args.scenarios:
        for p in sorted(Path(args.scenarios).glob("*.scn")):
            overrides[p.stem] = load_scenario(p)
    checks = reference_checks(overrides)
    bad = [c for c in checks if not c.ok]
    if args.json:
        sys.stdout.write(json.dumps({"ok": not bad, "checks": [c.to_json() for c in checks]}, indent=2) + "\n")
    else:
        w = max(len(c.name) for c in checks)
        for c in checks:
            sys.stdout.write(f"{'ok  ' if c.ok else 'FAIL'} {c.name:<{w}}  expected {c.expected}  observed {c.observed}\n")
    for c in bad:
        sys.stderr.write(f"mismatch: {c.name}: expected {c.expected}, observed {c.observed}\n")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omega-sim", description="Simulate and analyse reconfigurable systems.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("scenario", help="scenario file (.scn)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    r = sub.add_parser("run", help="simulate; writes trace.csv, channels.csv and summary.json")
    r.add_argument("scenario", nargs="+", help="scenario file(s)")
    r.add_argument("--out", help="output directory (default: current)")
    r.add_argument("--json", action="store_true", help="accepted for symmetry; summaries are JSON")
    r.add_argument("--seed", type=int, action="append", help="run seed (repeat for several)")
    r.add_argument("--jobs", type=int, default=1, help="parallel runs")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="reachability, hazard key and redundancy")
    common(a)
    a.add_argument("--budget", type=int, help="bits per reconfiguration step")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("reachability", help="budget table under a dwell limit")
    common(b)
    b.add_argument("--budget", type=int, action="append", help="bits per tick (repeat for several)")
    b.add_argument("--theta", type=int, help="ticks a mixed state may persist")
    b.set_defaults(func=cmd_reachability)

    s = sub.add_parser("safety", help="hazard keys, reliability and safety")
    common(s)
    s.set_defaults(func=cmd_safety)

    d = sub.add_parser("decompose", help="split the plant into equal fragments")
    common(d)
    d.add_argument("--ways", type=int, default=2, help="number of fragments")
    d.set_defaults(func=cmd_decompose)

    c = sub.add_parser("paper-check", help="reproduce the built-in worked examples")
    common(c, scenario=False)
    c.add_argument("--scenarios", help="directory whose .scn files replace the shipped ones")
    c.set_defaults(func=cmd_paper_check)
    return p


def main(argv=None) -> int:
    level = os.environ.get("OMEGA_SIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        sys.stderr.write(f"scenario error: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"file not found: {exc.filename or exc}\n")
        return 2
    except RunAbortedError as exc:
        sys.stderr.write(f"run aborted: {exc}\n")
        return 3
    except OmegaSimError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
