#!/usr/bin/env python3
"""End-to-end demo: generate a synthetic case, run the pipeline, walk a review
session through a grade flip, and emit the report.

Usage:
    python3 scripts/demo_end_to_end.py [workdir]

Leaves everything under `workdir` (default ./demo_run), with the processed
case laid out so `meningrade serve --data-root <workdir>` can serve it.
"""

import json
import sys
from pathlib import Path

from meningrade.core import CriterionKind
from meningrade.pipeline import process_case
from meningrade.report import write_report
from meningrade.session import SessionStore, create_session, submit_action
from meningrade.synth import SynthParams, generate_case


def main() -> int:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_run")
    src = workdir / "source"
    case_dir = workdir / "cases" / "demo"

    print("== generating synthetic case (8192px node, 5 clustered mitoses) ==")
    params = SynthParams(
        case_id="demo",
        seed=2024,
        node_px=8192,
        mitoses=5,
        necrosis_regions=1,
        sheeting_regions=1,
        nucleoli=2,
        small_cell_patches=3,
        brain_strip=True,
        with_ki67=True,
    )
    manifest = generate_case(src, params)
    print(f"   manifest: {manifest}")

    print("== processing ==")
    process_case(manifest, src / "bindings.json", case_dir, workers=1)
    grading = json.loads((case_dir / "grading.json").read_text())
    print(f"   suggested grade: {grading['grade']} (main: {grading['main_contributing']})")

    print("== review session ==")
    store = SessionStore(workdir / "sessions")
    session = create_session(case_dir, session_id="demo-session")
    store.persist_new(session)
    evidence = session.review.assessment.evidence[CriterionKind.MITOTIC_COUNT]
    print(f"   mitosis evidence items: {len(evidence)}")
    for item in evidence[:2]:
        action = submit_action(
            session, "evidence_action", {"evidence_id": item.evidence_id, "action": "decline"}
        )
        store.append_action(session, action)
        grade = session.review.assessment.grade
        count = session.review.assessment.snapshot.mitotic_count_10hpf
        print(f"   declined {item.evidence_id[:40]}...  count={count} grade={grade.grade.value}")
    action = submit_action(session, "override", {"criterion": "Necrosis", "value": "found"})
    store.append_action(session, action)
    print(f"   necrosis override -> grade {session.review.assessment.grade.grade.value}")

    print("== report ==")
    json_path, text_path = write_report(case_dir, workdir / "report", session.review.state_json())
    print((workdir / "report" / "report.txt").read_text())
    print(f"report at {json_path}")
    print(f"serve the case with: meningrade serve --data-root {workdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
