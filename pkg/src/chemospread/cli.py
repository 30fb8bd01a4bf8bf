"""Command-line entry point: ``chemospread {run,sweep,theory,verify}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import Params
from .harness import io
from .harness.commands import (
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_OK,
    cmd_run,
    cmd_sweep,
    cmd_theory,
    cmd_verify,
)
from .harness.config import ConfigError, env_overrides, load_config, set_path


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chemospread", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="run a parameter lattice")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("sweep_out"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("theory", help="print every closed-form constant")
    p.add_argument("--config", type=Path, help="run config; params and analysis.eps are used")
    p.add_argument("--out", type=Path)
    for name in ("chi", "a", "b", "lam", "mu"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--M", dest="big_m", type=float)

    p = sub.add_parser("verify", help="re-check a finished run from its artifacts")
    p.add_argument("--out", required=True, type=Path, help="run output directory")
    return ap


def _theory(args) -> int:
    values = {"chi": 0.0, "a": 1.0, "b": 1.0, "lam": 1.0, "mu": 1.0, "dim": 1}
    eps = 0.5
    if args.config:
        cfg = load_config(args.config)
        values.update(cfg.params.build().to_dict())
        eps = cfg.analysis.eps[0]
    for key in values:
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.eps is not None:
        eps = args.eps
    params = Params(**values)
    report = cmd_theory(params, eps, args.eta, args.big_m)
    text = io.dumps(report)
    sys.stdout.write(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "theory.json").write_text(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            out = args.out or Path(cfg.output.dir)
            return cmd_run(cfg, out, args.seed)
        if args.command == "sweep":
            spec = json.loads(args.config.read_text())
            for key, value in env_overrides().items():
                set_path(spec.setdefault("template", {}), key, value)
            if args.seed is not None:
                set_path(spec.setdefault("template", {}), "initial.seed", args.seed)
            code, rows = cmd_sweep(spec, args.out, args.jobs)
            return code
        if args.command == "theory":
            return _theory(args)
        if args.command == "verify":
            report = cmd_verify(args.out)
            sys.stdout.write(io.dumps(report))
            return EXIT_OK if report["verdict"] else EXIT_FAIL
    except ConfigError as exc:
        logging.getLogger("chemospread").error("config error: %s", exc)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        logging.getLogger("chemospread").error("%s", exc)
        return EXIT_CONFIG
    except io.SnapshotError as exc:
        logging.getLogger("chemospread").error("corrupt artifacts: %s", exc)
        return EXIT_CONFIG
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
