"""Command line entry point: ``python -m videoguide run|report|tasks``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, OptimizationFailed, VideoGuideError
from .optimize import ABLATIONS

EXIT_OK, EXIT_OPTIMIZATION, EXIT_CONFIG, EXIT_PROVIDER = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="videoguide", description="Video-guided trajectory optimization at desk scale.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full pipeline on one task")
    r.add_argument("task_pos", nargs="?", metavar="TASK", help="task file or built-in task name")
    r.add_argument("--task", help="task file or built-in task name")
    r.add_argument("--provider", choices=("oracle", "remote"), default="oracle")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--resume", action="store_true", help="reuse artifacts already present in --out")
    r.add_argument("--jobs", type=int, default=1, help="concurrent rollouts during optimization")
    r.add_argument("--ablate", choices=ABLATIONS)
    r.add_argument("--noise", type=float, default=1.0, help="oracle noise level (0 gives clean videos)")
    r.add_argument("--out", help="run directory (default runs/<task>-s<seed>)")
    r.add_argument("--population", type=int, default=128)
    r.add_argument("--iterations", type=int, default=5)

    rep = sub.add_parser("report", help="summarize one or more run manifests")
    rep.add_argument("manifests", nargs="+", help="manifest.json files or variant directories")
    rep.add_argument("--out", help="directory for plots and summary.txt")

    sub.add_parser("tasks", help="list built-in tasks")
    return p


def _run(args) -> int:
    from .pipeline import run
    from .taskfile import load_task

    name = args.task or args.task_pos
    if not name:
        raise ConfigurationError("no task given; pass --task <file or name>")
    task = load_task(name)
    out = args.out or f"runs/{task.name}-s{args.seed}"

    def progress(it, best):
        logging.getLogger("videoguide").info("iteration %d best cost %.5g", it + 1, best)

    m = run(task, provider=args.provider, seed=args.seed, out=out, resume=args.resume, jobs=args.jobs,
            ablate=args.ablate, noise=args.noise, population=args.population, iterations=args.iterations,
            progress=progress)
    mt = m.metrics
    print(f"task {m.task} variant {m.variant}: cost {mt['cost']:.5g} (init {mt['init_cost']:.5g})")
    if "success" in mt:
        print(f"success: {'yes' if mt['success'] else 'no'} ({mt['success_kind']} {mt['success_metric']:.4g})")
    print(f"manifest: {Path(out) / m.variant / 'manifest.json'}")
    return EXIT_OK


def _report(args) -> int:
    from .pipeline import report

    print(report(args.manifests, args.out), end="")
    return EXIT_OK


def _tasks(args) -> int:
    from .taskfile import builtin_tasks, load_task

    for name, path in builtin_tasks().items():
        print(f"{name:14s} {load_task(path).description}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "report": _report, "tasks": _tasks}
    try:
        return handlers[args.command](args)
    except VideoGuideError as exc:
        cause = getattr(exc, "cause", exc)
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, OptimizationFailed) and cause.diagnostics:
            print(json.dumps(cause.diagnostics), file=sys.stderr)
        return int(getattr(exc, "exit_code", EXIT_OPTIMIZATION))


if __name__ == "__main__":
    sys.exit(main())
