"""Command-line front end.

    sspdsim run <config> [--set key=value]... [--out DIR] [--seed N]
    sspdsim presets list
    sspdsim presets run <name> [--set key=value]... [--out DIR] [--seed N]
    sspdsim check-oracles [--fast] [--out DIR] [--seed N]

Exit codes: 0 success, 1 an oracle check failed, 2 invalid config or usage,
3 numeric failure in a core model, 4 I/O failure. Output goes to --out, else
to $SSPD_OUTPUT_DIR/<name>, else to ./sspdsim-out/<name>.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from importlib import metadata, resources
from pathlib import Path

from . import detector as dm
from . import photon_stats as ps
from .config import ConfigError, ExperimentConfig, build_config
from .experiments import RUNNERS, atomic_path, write_jsonl
from .montecarlo import FitError

EXIT_OK, EXIT_ORACLE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
ENV_OUT = "SSPD_OUTPUT_DIR"
DEFAULT_OUT = "sspdsim-out"

# failures raised by the core models while an experiment runs
NUMERIC_ERRORS = (dm.DetectorModelError, ps.PhotonStatsError, FitError, ValueError,
                  ArithmeticError, FloatingPointError)


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def preset_names() -> list[str]:
    root = resources.files("sspdsim.presets")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def preset_text(name: str) -> str:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return resources.files("sspdsim.presets").joinpath(f"{name}.cfg").read_text(encoding="utf-8")


def preset_summary(name: str) -> str:
    """First comment line of a preset."""
    for line in preset_text(name).splitlines():
        if line.startswith("#"):
            return line.lstrip("# ").strip()
    return ""


def output_dir(explicit: str | None, name: str) -> Path:
    if explicit:
        return Path(explicit)
    base = os.environ.get(ENV_OUT)
    return Path(base or DEFAULT_OUT) / name


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def execute(cfg: ExperimentConfig, out: Path) -> list[str]:
    """Run one experiment into ``out``; write effective.cfg and manifest.jsonl."""
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files = RUNNERS[cfg.kind](cfg, out)
    wall = time.perf_counter() - start
    with atomic_path(out / "effective.cfg") as tmp:
        tmp.write_text(cfg.to_text())
    files = files + ["effective.cfg"]
    manifest = {
        "experiment": cfg.kind,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "tool_version": tool_version(),
        "wall_time_s": round(wall, 6),
        "source": cfg.source,
        "outputs": [{"path": f, "sha256": _sha256(out / f)} for f in files],
    }
    write_jsonl(out / "manifest.jsonl", [manifest])
    return files


def _run_config(cfg: ExperimentConfig, out: Path) -> int:
    try:
        files = execute(cfg, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except NUMERIC_ERRORS as err:
        print(f"numeric error in {cfg.kind}: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in files:
        print(out / f)
    if cfg.kind == "oracle-check":
        return _report_oracles(out)
    return EXIT_OK


def _report_oracles(out: Path) -> int:
    with open(out / "oracle_checks.jsonl") as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    for r in recs:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['name']}: analytic={r['analytic']:.6g} mc={r['monte_carlo']:.6g} "
              f"{r['metric']}={r['score']:.3g} (tol {r['tolerance']:g})")
    bad = [r for r in recs if not r["passed"]]
    print(f"{len(recs) - len(bad)}/{len(recs)} oracle checks passed")
    return EXIT_ORACLE if bad else EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sspdsim", description="SSPD detector and photon-statistics simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    common(run)

    pre = sub.add_parser("presets", help="bundled figure presets")
    psub = pre.add_subparsers(dest="action", required=True)
    psub.add_parser("list", help="list presets")
    prun = psub.add_parser("run", help="run a preset")
    prun.add_argument("name")
    common(prun)

    orc = sub.add_parser("check-oracles", help="analytic vs Monte Carlo equivalence suite")
    orc.add_argument("--fast", action="store_true", help="small samples, loose tolerances")
    orc.add_argument("--out", help="output directory")
    orc.add_argument("--seed", type=int, default=1)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK

    try:
        if args.command == "run":
            path = Path(args.config)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as err:
                print(f"I/O error: cannot read config: {err}", file=sys.stderr)
                return EXIT_IO
            cfg = build_config(text, str(path), args.set, args.seed)
            return _run_config(cfg, output_dir(args.out, path.stem))

        if args.command == "presets":
            if args.action == "list":
                for name in preset_names():
                    print(f"{name}\t{preset_summary(name)}")
                return EXIT_OK
            cfg = build_config(preset_text(args.name), f"preset:{args.name}", args.set, args.seed)
            return _run_config(cfg, output_dir(args.out, args.name))

        if args.command == "check-oracles":
            cfg = build_config("experiment = oracle-check\n", "check-oracles",
                               [f"oracle.fast={'true' if args.fast else 'false'}"], args.seed)
            return _run_config(cfg, output_dir(args.out, "oracles-fast" if args.fast else "oracles"))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
