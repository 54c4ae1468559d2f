"""Command line entry points: process, synth, eval, report, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_config
from .errors import EngineError


def _add_process(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("process", help="run the offline detection/grading pipeline")
    p.add_argument("--manifest", required=True, help="case manifest JSON")
    p.add_argument("--bindings", required=True, help="detector bindings JSON")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", default=None, help="engine config JSON")


def _add_synth(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("synth", help="generate a synthetic case")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--case-id", default="synthetic-case")
    p.add_argument("--node-px", type=int, default=4096)
    p.add_argument("--tissue-px", type=int, default=None)
    p.add_argument("--mitoses", type=int, default=0)
    p.add_argument("--scatter-mitoses", action="store_true", help="spread mitoses instead of clustering them")
    p.add_argument("--necrosis", type=int, default=0)
    p.add_argument("--sheeting", type=int, default=0)
    p.add_argument("--nucleoli", type=int, default=0)
    p.add_argument("--small-cell-patches", type=int, default=0)
    p.add_argument("--baseline-nuclei", type=int, default=70)
    p.add_argument("--brain-strip", action="store_true")
    p.add_argument("--no-ki67", action="store_true")


def _add_eval(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("eval", help="PR sweep / counting-error evaluation")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--truth", required=True, help="ground-truth JSONL")
    p.add_argument("--mode", choices=("classification", "counting"), default="classification")
    p.add_argument("--out", default=None, help="write the report JSON here")


def _add_report(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("report", help="emit the case report")
    p.add_argument("--case-dir", required=True, help="processed case directory")
    p.add_argument("--session", default=None, help="session directory to fold in")
    p.add_argument("--out", default=None, help="output directory (defaults to the case dir)")


def _add_serve(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("serve", help="run the review HTTP service")
    p.add_argument("--data-root", required=True, help="directory holding cases/ and sessions/")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="meningrade")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_process(sub)
    _add_synth(sub)
    _add_eval(sub)
    _add_report(sub)
    _add_serve(sub)
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except EngineError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "process":
        from .pipeline import process_case

        config = load_config(args.config)
        processed = process_case(
            args.manifest, args.bindings, args.out, workers=args.workers, config=config
        )
        grading = json.loads((Path(args.out) / "grading.json").read_text())
        print(
            f"processed case {processed.case_id}: grade {grading['grade']}"
            + (
                f" (main: {grading['main_contributing']})"
                if grading["main_contributing"]
                else ""
            )
        )
        return 0

    if args.command == "synth":
        from .synth import SynthParams, generate_case

        params = SynthParams(
            case_id=args.case_id,
            seed=args.seed,
            node_px=args.node_px,
            tissue_px=args.tissue_px,
            with_ki67=not args.no_ki67,
            mitoses=args.mitoses,
            cluster_mitoses=not args.scatter_mitoses,
            necrosis_regions=args.necrosis,
            sheeting_regions=args.sheeting,
            nucleoli=args.nucleoli,
            small_cell_patches=args.small_cell_patches,
            baseline_nuclei=args.baseline_nuclei,
            brain_strip=args.brain_strip,
        )
        manifest_path = generate_case(args.out, params)
        print(f"wrote {manifest_path}")
        return 0

    if args.command == "eval":
        from .evalharness import evaluate_files

        report = evaluate_files(args.pred, args.truth, mode=args.mode)
        payload = json.dumps(report.to_json(), indent=1, sort_keys=True)
        if args.out:
            Path(args.out).write_text(payload)
            print(f"wrote {args.out}")
        else:
            print(payload)
        return 0

    if args.command == "report":
        from .report import write_report
        from .session import SessionStore

        session_state = None
        if args.session:
            session_dir = Path(args.session)
            store = SessionStore(session_dir.parent)
            session = store.load_session(session_dir.name, args.case_dir)
            session_state = session.review.state_json()
        json_path, text_path = write_report(args.case_dir, args.out, session_state)
        print(f"wrote {json_path} and {text_path}")
        return 0

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        app = create_app(args.data_root)
        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
