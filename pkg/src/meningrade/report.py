"""Case report emitter: JSON plus a human-readable summary of the grading,
per-criterion statuses, sampled regions, and the evidence index."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import MissingInputError


def build_report(case_dir: str | Path, session_state: dict | None = None) -> dict:
    """Assemble the report payload from processed artifacts, or from a session
    state when one is supplied (post-review values win)."""
    case_dir = Path(case_dir)
    grading_path = case_dir / "grading.json"
    if not grading_path.is_file():
        raise MissingInputError(f"case at {case_dir} has no grading.json (not processed)")
    case = json.loads((case_dir / "case.json").read_text())
    if session_state is not None:
        grading = session_state["grade"]
        regions = session_state["regions"]
        evidence = session_state["evidence"]
    else:
        grading = json.loads(grading_path.read_text())
        regions = json.loads((case_dir / "regions.json").read_text())
        evidence = json.loads((case_dir / "evidence.json").read_text())
    evidence_index = {
        kind: [item["evidence_id"] for item in items] for kind, items in evidence.items()
    }
    return {
        "case_id": case["case_id"],
        "slides": [s["slide_id"] for s in case["slides"]],
        "grade": grading["grade"],
        "main_contributing": grading["main_contributing"],
        "fired_rules": grading["fired_rules"],
        "criteria": grading["criteria"],
        "regions": regions,
        "evidence_index": evidence_index,
    }


def render_text(report: dict) -> str:
    lines = [
        f"Case {report['case_id']}",
        f"Suggested grade: WHO grade {report['grade']}",
    ]
    if report["main_contributing"]:
        lines.append(f"Main contributing criterion: {report['main_contributing']}")
    if report["fired_rules"]:
        lines.append("Fired rules:")
        for rule in report["fired_rules"]:
            lines.append(f"  - {rule['id']}: {rule['text']}")
    lines.append("Criteria:")
    for row in report["criteria"]:
        value = f" value={row['value']}" if "value" in row and row["value"] is not None else ""
        lines.append(f"  {row['kind']:<18} {row['status']:<14} [{row['color']}]{value}")
    lines.append(
        f"Mitotic count (best 10-HPF region): {report['regions']['mitotic_count_10hpf']}"
        + (
            f" on {report['regions']['mitosis_slide']}"
            if report["regions"].get("mitosis_slide")
            else ""
        )
    )
    lines.append("Sampled regions:")
    for s in report["regions"]["samples"]:
        r = s["rect"]
        lines.append(
            f"  {s['criterion']:<14} {s['kind']:<12} value={s['value']} "
            f"at ({r['x']},{r['y']}) {r['w']}x{r['h']} on {s['slide_id']}"
        )
    lines.append("Evidence:")
    for kind, ids in report["evidence_index"].items():
        lines.append(f"  {kind}: {len(ids)} item(s)")
    return "\n".join(lines) + "\n"


def write_report(case_dir: str | Path, out_dir: str | Path | None = None, session_state: dict | None = None) -> tuple[Path, Path]:
    case_dir = Path(case_dir)
    out_dir = Path(out_dir) if out_dir else case_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report = build_report(case_dir, session_state)
    json_path = out_dir / "report.json"
    text_path = out_dir / "report.txt"
    json_path.write_text(json.dumps(report, sort_keys=True, indent=1))
    text_path.write_text(render_text(report))
    return json_path, text_path
