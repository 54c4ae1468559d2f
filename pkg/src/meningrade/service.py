"""HTTP review service: grading state, evidence, heatmaps, slide tiles, and
session actions over the processed-case artifacts.

Reads are concurrent; per-session mutations serialize through the session
lock. Pipeline processing never happens in the request path.
"""

from __future__ import annotations

import io
import json
import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image

from .core import CriterionKind, Rect
from .errors import (
    ActionValidationError,
    EngineError,
    MissingInputError,
    OutOfBoundsError,
    SchemaViolationError,
    UnknownResourceError,
)
from .session import Session, SessionStore, create_session, submit_action
from .tiler import PyramidSlide, open_case, read_region

_STATUS = {
    UnknownResourceError: 404,
    MissingInputError: 404,
    OutOfBoundsError: 404,
    ActionValidationError: 422,
    SchemaViolationError: 422,
}


class CaseRegistry:
    """Processed cases under `<data_root>/cases/<case_id>/`, plus the slide
    pyramids their manifests reference."""

    def __init__(self, data_root: Path):
        self.data_root = Path(data_root)
        self.cases_dir = self.data_root / "cases"
        self._slides: dict[str, PyramidSlide] = {}
        self._lock = threading.Lock()

    def case_ids(self) -> list[str]:
        if not self.cases_dir.is_dir():
            return []
        return sorted(
            p.name for p in self.cases_dir.iterdir() if (p / "case.json").is_file()
        )

    def case_dir(self, case_id: str) -> Path:
        d = self.cases_dir / case_id
        if not (d / "case.json").is_file():
            raise UnknownResourceError(f"unknown case {case_id!r}")
        return d

    def read_json(self, case_id: str, name: str) -> dict:
        path = self.case_dir(case_id) / name
        if not path.is_file():
            raise UnknownResourceError(f"{name} not found for case {case_id}")
        return json.loads(path.read_text())

    def slide(self, slide_id: str) -> PyramidSlide:
        with self._lock:
            if slide_id in self._slides:
                return self._slides[slide_id]
            for case_id in self.case_ids():
                manifest_path = self.case_dir(case_id) / "case.json"
                case = open_case(manifest_path)
                for sid, pyramid in case.pyramids.items():
                    self._slides.setdefault(sid, pyramid)
            if slide_id not in self._slides:
                raise UnknownResourceError(f"unknown slide {slide_id!r}")
            return self._slides[slide_id]


def create_app(data_root: str | Path) -> FastAPI:
    data_root = Path(data_root)
    registry = CaseRegistry(data_root)
    store = SessionStore(data_root / "sessions")
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()

    app = FastAPI(title="meningrade review service")

    @app.exception_handler(EngineError)
    async def engine_error_handler(request: Request, exc: EngineError):
        status = 400
        for cls, code in _STATUS.items():
            if isinstance(exc, cls):
                status = code
                break
        return JSONResponse(
            status_code=status, content={"error": exc.code, "detail": str(exc)}
        )

    def get_session(session_id: str) -> Session:
        with sessions_lock:
            if session_id in sessions:
                return sessions[session_id]
        if session_id in store.list_sessions():
            meta = json.loads(
                (store.session_dir(session_id) / "session.json").read_text()
            )
            session = store.load_session(session_id, registry.case_dir(meta["case_id"]))
            with sessions_lock:
                return sessions.setdefault(session_id, session)
        raise UnknownResourceError(f"unknown session {session_id!r}")

    # -- cases ---------------------------------------------------------------

    @app.get("/cases")
    def list_cases():
        out = []
        for case_id in registry.case_ids():
            grading = registry.read_json(case_id, "grading.json")
            out.append(
                {
                    "case_id": case_id,
                    "grade": grading.get("grade"),
                    "main_contributing": grading.get("main_contributing"),
                }
            )
        return out

    @app.get("/cases/{case_id}/grading")
    def case_grading(case_id: str):
        return registry.read_json(case_id, "grading.json")

    @app.get("/cases/{case_id}/regions")
    def case_regions(case_id: str):
        return registry.read_json(case_id, "regions.json")

    @app.get("/cases/{case_id}/criteria/{kind}/evidence")
    def case_evidence(case_id: str, kind: str):
        try:
            criterion = CriterionKind(kind)
        except ValueError as exc:
            raise UnknownResourceError(f"unknown criterion {kind!r}") from exc
        evidence = registry.read_json(case_id, "evidence.json")
        return evidence.get(criterion.value, [])

    @app.get("/cases/{case_id}/criteria/{kind}/heatmap")
    def case_heatmap(case_id: str, kind: str, slide: str | None = None):
        criterion = _parse_criterion(kind)
        path = _heatmap_path(registry, case_id, criterion, slide, ".png")
        return Response(
            content=path.read_bytes(),
            media_type="image/png",
            headers={"Cache-Control": "no-cache"},
        )

    @app.get("/cases/{case_id}/criteria/{kind}/heatmap/meta")
    def case_heatmap_meta(case_id: str, kind: str, slide: str | None = None):
        criterion = _parse_criterion(kind)
        path = _heatmap_path(registry, case_id, criterion, slide, ".json")
        return json.loads(path.read_text())

    @app.get("/cases/{case_id}/saliency/{name}")
    def case_saliency(case_id: str, name: str):
        path = registry.case_dir(case_id) / "saliency" / Path(name).name
        if not path.is_file():
            raise UnknownResourceError(f"no saliency raster {name!r}")
        return Response(
            content=path.read_bytes(),
            media_type="image/png",
            headers={"Cache-Control": "public, max-age=31536000, immutable"},
        )

    # -- sessions ------------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def post_session(body: dict):
        case_id = body.get("case_id")
        if not case_id:
            raise ActionValidationError("body must carry a case_id")
        case_dir = registry.case_dir(case_id)
        session = create_session(case_dir)
        store.persist_new(session)
        with sessions_lock:
            sessions[session.session_id] = session
        return session.summary_json()

    @app.get("/sessions/{session_id}")
    def get_session_state(session_id: str):
        return get_session(session_id).summary_json()

    @app.post("/sessions/{session_id}/actions")
    def post_action(session_id: str, body: dict):
        session = get_session(session_id)
        kind = body.get("kind")
        payload = body.get("payload", {})
        actor = body.get("actor", "pathologist")
        action = submit_action(session, kind, payload, actor)
        store.append_action(session, action)
        return {
            "action": action.to_json(),
            "grade": session.review.assessment.grade.to_json(),
            "state": session.review.state_json(),
        }

    # -- slides ----------------------------------------------------------------

    @app.get("/slides/{slide_id}/tiles/{level}/{tx}/{ty}")
    def slide_tile(slide_id: str, level: int, tx: int, ty: int):
        pyramid = registry.slide(slide_id)
        data = pyramid.tile_bytes(level, tx, ty)
        return Response(
            content=data,
            media_type="image/png",
            headers={"Cache-Control": "public, max-age=31536000, immutable"},
        )

    @app.get("/slides/{slide_id}/region")
    def slide_region(slide_id: str, x: int, y: int, w: int, h: int, level: int = 0):
        pyramid = registry.slide(slide_id)
        if w < 1 or h < 1 or w * h > 4096 * 4096:
            raise ActionValidationError("region size out of range")
        raster = read_region(pyramid, Rect(x, y, w, h), level)
        buf = io.BytesIO()
        Image.fromarray(raster).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/slides/{slide_id}/meta")
    def slide_meta(slide_id: str):
        meta = registry.slide(slide_id).meta
        return meta.to_json()

    return app


def _parse_criterion(kind: str) -> CriterionKind:
    try:
        return CriterionKind(kind)
    except ValueError as exc:
        raise UnknownResourceError(f"unknown criterion {kind!r}") from exc


def _heatmap_path(
    registry: CaseRegistry, case_id: str, criterion: CriterionKind, slide: str | None, ext: str
) -> Path:
    hm_dir = registry.case_dir(case_id) / "heatmaps"
    if slide is not None:
        path = hm_dir / f"{slide}.{criterion.value}{ext}"
        if not path.is_file():
            raise UnknownResourceError(
                f"no {criterion.value} heatmap for slide {slide!r}"
            )
        return path
    if hm_dir.is_dir():
        matches = sorted(hm_dir.glob(f"*.{criterion.value}{ext}"))
        if matches:
            return matches[0]
    raise UnknownResourceError(f"no heatmap for {criterion.value}")
