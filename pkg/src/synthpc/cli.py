"""Command-line front end.

    synthpc --preset set4 --seed 7 --out run/            # whole pipeline
    synthpc render --preset set4 --seed 7 --out run/     # one stage (same as --stage render)
    synthpc show-config --preset set2                    # print the resolved config
    synthpc schema                                       # print the config JSON Schema
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from synthpc import pipeline

THREADS_ENV = "SYNTHPC_THREADS"
COMMANDS = ("run", *pipeline.STAGES, "show-config", "schema")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synthpc", description="Synthetic annotated point-cloud pipeline.")
    p.add_argument("command", nargs="?", default="run", choices=COMMANDS,
                   help="pipeline stage to run, 'run' for all stages (default), or a helper command")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="pipeline config JSON")
    src.add_argument("--preset", choices=pipeline.PRESETS, help="built-in dataset preset")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit); overrides the config")
    p.add_argument("--out", help="run directory; overrides paths.output")
    p.add_argument("--threads", type=int,
                   help=f"worker threads for rendering and search (default: ${THREADS_ENV} or all cores)")
    p.add_argument("--stage", choices=("all", *pipeline.STAGES),
                   help="run a single stage (alternative to the positional command)")
    return p


def resolve_config(args) -> pipeline.PipelineConfig:
    if args.config:
        cfg = pipeline.load_config(args.config)
    else:
        cfg = pipeline.preset(args.preset or "set4")
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise pipeline.ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out:
        cfg.paths.output = args.out
    return cfg


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise pipeline.ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "schema":
            print(json.dumps(pipeline.config_schema(), indent=2, sort_keys=True))
            return 0
        cfg = resolve_config(args)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_json())
            return 0
        n = _threads(args)
        if n is not None:
            from synthpc.raycast import set_threads

            set_threads(n)
        stage = args.stage if args.stage and args.stage != "all" else args.command
        if stage == "run":
            manifest = pipeline.run_pipeline(cfg)
        else:
            manifest = pipeline.run_stage(cfg, stage)
    except pipeline.ConfigError as exc:
        print(f"synthpc: config error: {exc}", file=sys.stderr)
        return 2
    except pipeline.StageError as exc:
        print(f"synthpc: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.paths.output}/manifest.json: status {manifest['status']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
