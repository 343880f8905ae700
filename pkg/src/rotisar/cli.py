"""Command line entry point.

Verbs: ``simulate``, ``estimate``, ``image``, ``sweep`` and ``kernels``.
Exit status is 0 on success, 2 for configuration problems and 3 when a
pipeline stage fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, from_dict, load_config, load_preset
from .pipeline import SWEEP_PARAMETERS, StageError, run_pipeline, sweep, write_kernel_tables

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
log = logging.getLogger("rotisar")

VERB_STAGE = {"simulate": "correlate", "estimate": "estimate", "image": "image"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML scenario file (overrides --preset)")
    p.add_argument("--preset", choices=PRESETS, default="desk",
                   help="built-in scenario used when no --config is given")
    p.add_argument("--out", type=Path, help="output directory (default: config output.directory)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--stage-cache", type=Path,
                   help="directory for reusable correlation sets")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotisar", description="Passive ISAR imaging of rotating targets.")
    sub = parser.add_subparsers(dest="verb", required=True)
    helps = {
        "simulate": "synthesize echoes and correlations",
        "estimate": "estimate the rotation from autocorrelation supports",
        "image": "full pipeline: estimate, migrate and form images",
        "sweep": "repeat the full pipeline over values of one parameter",
        "kernels": "tabulate the analytic resolution kernels",
    }
    for verb, text in helps.items():
        p = sub.add_parser(verb, help=text, description=text)
        _common(p)
        if verb == "sweep":
            p.add_argument("--parameter", required=True, choices=sorted(SWEEP_PARAMETERS))
            p.add_argument("--values", required=True,
                           help="comma-separated values, e.g. 3.1416,2.7489,2.3562")
            p.add_argument("--workers", type=int, default=1,
                           help="runs executed concurrently (default 1)")
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config is not None else load_preset(args.preset)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"seed: expected a non-negative integer, got {args.seed}")
        cfg = _with_seed(cfg, args.seed)
    return cfg


def _with_seed(cfg, seed):
    data = cfg.to_dict()
    data["seed"] = seed
    return from_dict(data)


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values: cannot parse {text!r} as numbers") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        out = args.out if args.out is not None else Path(cfg.output.directory)
        if args.verb == "sweep":
            values = _parse_values(args.values)
            if not values:
                raise ConfigError("--values: empty list")
            entries = sweep(cfg, args.parameter, values, out, args.workers, args.stage_cache)
            failed = [e for e in entries if e.error]
            for e in entries:
                log.info("%s=%s: %s", args.parameter, e.value, e.error or "ok")
            print(f"sweep over {args.parameter}: {len(entries) - len(failed)} ok, "
                  f"{len(failed)} failed; results in {out / 'sweep.csv'}")
            return EXIT_STAGE if len(failed) == len(entries) else EXIT_OK
        if args.verb == "kernels":
            files = write_kernel_tables(cfg, out)
            print(f"wrote {len(files)} files to {out}")
            return EXIT_OK
        rep = run_pipeline(cfg, out, until=VERB_STAGE[args.verb], stage_cache=args.stage_cache)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(f"report written to {out / 'report.txt'}")
    for note in rep.notes:
        log.info(note)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
