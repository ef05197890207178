"""Command-line entry point: ``ddbranch simulate`` and ``ddbranch verify SUITE``.

Exit codes: 0 success, 1 a verification check failed (report still
written), 2 configuration error, 3 a simulation cap was hit (partial
outputs written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .offspring import check_assumptions
from .simulate import ConfigError, SimConfig, run_forward, run_metadata, run_spine
from .stats import RNG_ALGORITHM, random_stream
from .suites import SUITES

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAP = 0, 1, 2, 3


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def command_simulate(args) -> int:
    cfg_path = Path(args.config)
    data = _load_json(cfg_path)
    mode = data.pop("mode", "forward")
    want_forest = bool(data.pop("forest", False)) or args.forest
    if mode not in ("forward", "spine"):
        raise ConfigError(f"mode must be 'forward' or 'spine', got {mode!r}")
    if args.seed is not None:
        data["seed"] = args.seed
    if "seed" not in data:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    config = SimConfig.from_dict(data, base=cfg_path.parent)
    if mode == "spine" and config.k < 1:
        raise ConfigError("spine mode needs k >= 1")
    report = check_assumptions(config.law, config.q)
    if not report.passed:
        print(f"warning: standing assumptions not met: {report.to_dict()}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random_stream(config.seed, 0)
    runner = run_spine if mode == "spine" else run_forward
    traj, forest = runner(config, rng, genealogy=want_forest)
    traj.to_csv(out / "trajectory.csv")
    if forest is not None:
        forest.to_csv(out / "forest.csv")
    meta = run_metadata(config, traj, mode=mode, rng=RNG_ALGORITHM, assumptions=report.to_dict())
    _dump(meta, out / "metadata.json")
    if traj.status != "completed":
        print(f"simulation stopped early: {traj.status}", file=sys.stderr)
        return EXIT_CAP
    return EXIT_OK


def command_verify(args) -> int:
    data = _load_json(args.config) if args.config else {}
    seed = data.pop("seed", None)
    if args.seed is not None:
        seed = args.seed
    if seed is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    if args.reps is not None:
        key = {"kingman": "n_runs", "density": "n_runs"}.get(args.suite, "reps")
        data[key] = args.reps
    suite = SUITES[args.suite].from_dict(data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.suite == "kingman":
        report = suite.run(int(seed), threads=args.threads, out=out)
    else:
        report = suite.run(int(seed), threads=args.threads)
    (out / "report.json").write_text(report.to_json())
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: value={c.value:.6g} tolerance={c.tolerance:.6g}")
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddbranch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run one forward or spine simulation")
    s.add_argument("config", help="JSON simulation config")
    s.add_argument("--out", default="out", help="output directory")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--forest", action="store_true", help="also dump the genealogy as CSV")
    s.set_defaults(func=command_simulate)
    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("config", nargs="?", default=None, help="JSON suite config (defaults otherwise)")
    v.add_argument("--out", default="out", help="output directory")
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--reps", type=int, default=None, help="replicates (runs for kingman/density)")
    v.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    v.set_defaults(func=command_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
