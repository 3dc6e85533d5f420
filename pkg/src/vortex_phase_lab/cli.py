"""Command line entry point: ``vortex-phase-lab <task> --config <path> [--out <dir>]``.

Exit codes: 0 success, 1 failure (a JSON object on stderr), 2 when the
``transition`` task finds no transition.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import TASKS, ConfigError, RunConfig, parse_config

log = logging.getLogger(__name__)

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def apply_thread_cap(environ=os.environ) -> int | None:
    """Propagate VPL_THREADS to the BLAS/OpenMP thread variables.

    Must run before numpy is imported to take effect on the BLAS pools.
    """
    raw = environ.get("VPL_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"VPL_THREADS must be a positive integer, got {raw!r}", "VPL_THREADS") from None
    if n < 1:
        raise ConfigError(f"VPL_THREADS must be a positive integer, got {raw!r}", "VPL_THREADS")
    for var in _THREAD_VARS:
        environ[var] = str(n)
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vortex-phase-lab", description=__doc__.splitlines()[0])
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", default=None, help="output directory (default: the config's 'out' or .)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _fail(kind: str, message: str, **extra) -> int:
    payload = {"status": "error", "kind": kind, "message": message}
    payload.update(extra)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_thread_cap()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = parse_config(args.config, task=args.task, out=args.out)
        for w in caught:
            log.warning("%s", w.message)
    except ConfigError as exc:
        return _fail("config", str(exc), field=exc.field, line=exc.line)
    return execute(cfg)


def execute(cfg: RunConfig) -> int:
    """Run a validated configuration; returns the process exit code."""
    from .errors import ConvergenceError, DomainError
    from .tasks import NoTransition, run_task

    out = Path(cfg.out if cfg.out is not None else ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = run_task(cfg, out)
    except NoTransition as exc:
        sys.stderr.write(json.dumps({"status": "no-transition", "message": str(exc)}, sort_keys=True) + "\n")
        return 2
    except ConfigError as exc:
        return _fail("config", str(exc), field=exc.field)
    except DomainError as exc:
        return _fail(type(exc).__name__, str(exc))
    except ConvergenceError as exc:
        return _fail("ConvergenceError", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    for f in files:
        log.info("wrote %s", f)
    return 0


def main_exit():  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
