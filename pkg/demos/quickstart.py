"""End-to-end walk through one desk task with the offline oracle providers.

    python demos/quickstart.py [TASK] [--seed N] [--noise LEVEL] [--out DIR]

Runs a reduced optimization budget so it finishes in about a minute, then
prints what each stage produced and writes a report with plots.
"""

import argparse
import json
from pathlib import Path

from videoguide.pipeline import report, run
from videoguide.supervision import SupervisionBundle
from videoguide.taskfile import load_task


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("task", nargs="?", default="hammer-peg")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--out", default="runs/quickstart")
    args = ap.parse_args()

    task = load_task(args.task)
    print(f"Task {task.name}: {task.description}")
    print(f"  actuator {task.scene.actuator.name!r}, target {task.scene.targets[0].name!r}")

    m = run(task, seed=args.seed, out=args.out, noise=args.noise, population=32, iterations=3,
            progress=lambda it, best: print(f"  CMA-ES generation {it + 1}: best cost {best:.4f}"))
    out = Path(args.out)

    meta = json.loads((out / "video" / "meta.json").read_text())
    print(f"\nVideo selection: candidate scores {[s['total'] for r in meta['selection'] for s in r]}, "
          f"kept sample {meta['index']} (score {meta['score']['total']}/15)")
    print(f"  keyframes {m.metrics['keyframes']}")

    bundle = SupervisionBundle.load(out / "bundle")
    names = {o.id: o.name for o in task.scene.objects}
    print("\nContact schedule (keyframe: pairs expected to touch)")
    for k, row in zip(bundle.keyframes, bundle.contacts.table()):
        touching = [f"{names[a]}-{names[b]}" for (a, b), v in zip(bundle.contacts.pairs, row) if v]
        print(f"  {k:3d}: {', '.join(touching) or '-'}")

    mt = m.metrics
    print(f"\nOptimization: cost {mt['init_cost']:.4f} at the tracked initialization, "
          f"{mt['cost']:.4f} after {mt['evaluations']} rollouts")
    for term, value in mt["terms"].items():
        print(f"  {term:8s} {value:.4f}")
    print(f"\nExecution: success {mt['success']} ({mt['success_kind']} metric {mt['success_metric']:.4f})")

    text = report([m], out / "report")
    print(f"\nReport written to {out / 'report'} ({len(text.splitlines())} summary lines)")


if __name__ == "__main__":
    main()
