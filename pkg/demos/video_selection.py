"""Rubric scoring and rejection sampling of candidate videos.

    python demos/video_selection.py [TASK]

The oracle provider renders every scripted variant of the task, including
failed attempts and a take showing an unexpected object. The verifier scores
each take and the best usable one is kept.
"""

import argparse

from videoguide.errors import AllRejected
from videoguide.imagination import (NoiseModel, OracleVerifier, OracleVideoProvider, parse_rubric_reply,
                                    rewrite_prompt, select)
from videoguide.taskfile import load_task

REMOTE_STYLE_REPLY = """The hammer follows the description and the hand motion looks natural.
match_description: 5/6
hand_motion: 3/3
goal_reached: 5/6
score: 13/15"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("task", nargs="?", default="hammer-peg")
    args = ap.parse_args()

    task = load_task(args.task)
    prompt = rewrite_prompt(task.description, task.scene)
    print(f"Prompt for the video model:\n  {prompt}\n")

    script = task.script()
    provider = OracleVideoProvider(task.scene, script, NoiseModel(1.0), task.segment_duration)
    verifier = OracleVerifier()
    scored = [(s, verifier.verify(s, task.description))
              for s in provider.generate(prompt, None, len(script.candidates), seed=0)]
    for sample, score in scored:
        verdict = "usable" if score.accepted else "rejected"
        extra = ", new object seen" if score.new_object_detected else ""
        print(f"  take {sample.index} ({sample.oracle.variant:9s}) scored {score.total:2d}/15, {verdict}{extra}")
    try:
        chosen = select(scored)
    except AllRejected as exc:
        print(f"every candidate was rejected: {exc.scores}")
        return
    print(f"\nKept take {chosen.sample.index} with score {chosen.score.total}/15")

    print("\nParsing a free-text verifier reply:")
    parsed = parse_rubric_reply(REMOTE_STYLE_REPLY)
    print(f"  total {parsed.total}, components {parsed.match_description}/{parsed.hand_motion}/"
          f"{parsed.goal_reached}, usable {parsed.accepted}")


if __name__ == "__main__":
    main()
