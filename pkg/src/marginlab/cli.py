"""Command-line experiment runner.

    marginlab run <config.yaml> [--out DIR] [--seed N]
    marginlab validate <config.yaml>

Exit codes: 0 on success, 1 when the config fails validation, 2 when a
run fails at runtime. Every run writes resolved_config.yaml (the config
with all defaults filled in; rerunning it reproduces the same CSV hashes)
and manifest.json (sha256 of every emitted file).
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from . import config as cfgmod
from . import experiments, reporting

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marginlab", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("config", help="YAML experiment config")
    run_p.add_argument("--out", default=None, help="output directory (default: config's output_dir or ./out)")
    run_p.add_argument("--seed", type=int, default=None, help="override the global seed")
    val_p = sub.add_parser("validate", help="check a config without running it")
    val_p.add_argument("config", help="YAML experiment config")
    return parser


def run(config_path: str, out: str | None = None, seed: int | None = None) -> int:
    try:
        cfg = cfgmod.load_config(config_path)
    except Exception as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if seed is not None:
        cfg["seed"] = seed
    violations = cfgmod.validate(cfg)
    if violations:
        for v in violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    resolved = cfgmod.resolve(cfg)
    outdir = Path(out or cfg.get("output_dir", "out"))
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        resolved_path = outdir / "resolved_config.yaml"
        cfgmod.dump_resolved(resolved, resolved_path)
        runner = experiments.RUNNERS[resolved["experiment"]]
        files = runner(resolved, outdir)
        manifest = reporting.write_manifest(
            outdir, resolved["experiment"], resolved["seed"], [resolved_path, *files]
        )
    except Exception as exc:
        print(f"runtime failure in {resolved['experiment']}: {exc}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_RUNTIME
    print(f"wrote {len(files) + 1} artifacts to {outdir} (manifest: {manifest})")
    return EXIT_OK


def validate(config_path: str) -> int:
    try:
        cfg = cfgmod.load_config(config_path)
    except Exception as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    violations = cfgmod.validate(cfg)
    if violations:
        for v in violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    print("config ok")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, out=args.out, seed=args.seed)
    return validate(args.config)


if __name__ == "__main__":
    sys.exit(main())
