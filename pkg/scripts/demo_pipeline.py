#!/usr/bin/env python3
"""Walk one puzzle story through every pipeline stage, then solve the result.

Runs entirely offline: the stage responses are the recorded ones under
tests/data, fed through the scripted backend.  Prints each stage's artifact,
the assembled program, its stable models, and the final benchmark verdict.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from puzzle2asp.bench import evaluate_case, load_dataset
from puzzle2asp.gateway import ScriptedBackend
from puzzle2asp.ground import ground_program
from puzzle2asp.pipeline import run_pipeline
from puzzle2asp.solve import enumerate_models, render_models
from puzzle2asp.syntax import render_program

DATA = ROOT / "tests" / "data"
CASE_ID = "against_grain"


def main() -> int:
    scripts = json.loads((DATA / "mini_script.json").read_text())
    case = next(c for c in load_dataset(DATA / "mini.jsonl") if c.id == CASE_ID)

    print("=" * 72)
    print("story")
    print("=" * 72)
    print(case.story.strip())

    trace = run_pipeline(case.story, backend=ScriptedBackend(scripts[CASE_ID]))
    for record in trace.records:
        print()
        print("=" * 72)
        print(f"stage: {record.stage.value}  (attempts: {record.attempts})")
        print("=" * 72)
        print(record.raw_response.strip())

    print()
    print("=" * 72)
    print(f"assembled program  (outcome: {trace.outcome.kind})")
    print("=" * 72)
    print(render_program(trace.assembled_program).strip())

    result = enumerate_models(ground_program(trace.assembled_program), limit=None)
    print()
    print("=" * 72)
    print("stable models")
    print("=" * 72)
    print(render_models(result).strip())

    verdict = evaluate_case(case, ScriptedBackend(scripts[CASE_ID]))
    print()
    print(f"benchmark verdict for {case.id!r}: {verdict.outcome.label()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
