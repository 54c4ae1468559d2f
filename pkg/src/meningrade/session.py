"""Review sessions over processed cases: an append-only action log folded into
a materialized state, with deterministic replay and snapshot persistence.

The materialized state is a pure function of (pipeline output, action log);
live state and replayed state must compare byte-identically at every seq.
Timestamps live only in the log, never in the materialized state.
"""

from __future__ import annotations

import copy
import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .core import CriterionKind, Detection, DetectionStatus, Rect
from .errors import (
    ActionValidationError,
    LogCorruptionError,
    MissingInputError,
    UnknownResourceError,
)
from .grader import CriterionState, OverrideValue, ReviewSummary, Subtype
from .pipeline import Assessment, ProcessedCase, derive_assessment, load_processed_case

ACTION_KINDS = ("evidence_action", "override", "manual_add", "clear_override")
EVIDENCE_ACTIONS = {
    "approve": DetectionStatus.APPROVED,
    "decline": DetectionStatus.DECLINED,
    "uncertain": DetectionStatus.UNCERTAIN,
}


@dataclass(frozen=True)
class Action:
    seq: int
    kind: str
    payload: dict
    actor: str = "pathologist"
    timestamp: str = ""

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "payload": self.payload,
            "actor": self.actor,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Action":
        return cls(
            seq=int(obj["seq"]),
            kind=obj["kind"],
            payload=obj.get("payload", {}),
            actor=obj.get("actor", "pathologist"),
            timestamp=obj.get("timestamp", ""),
        )


def _snapshot_json(assessment: Assessment) -> dict:
    s = assessment.snapshot

    def state_json(st: CriterionState) -> dict:
        return {
            "kind": st.kind.value,
            "ai_suggestion": st.ai_suggestion.value,
            "ai_value": st.ai_value,
            "override": st.override.value if st.override else None,
            "review": _review_json(st.review),
        }

    return {
        "mitotic_count_10hpf": s.mitotic_count_10hpf,
        "ki67_percent": s.ki67_percent,
        "ki67_applicable": s.ki67_applicable,
        "ki67_override": s.ki67_override,
        "subtype": s.subtype.value,
        "subtype_set": s.subtype_set,
        "features": [state_json(st) for st in s.feature_states],
        "brain_invasion": state_json(s.brain_invasion),
        "mitosis_review": _review_json(s.mitosis_review),
    }


def _review_json(r: ReviewSummary | None) -> dict | None:
    if r is None:
        return None
    return {
        "unreviewed": r.unreviewed,
        "approved": r.approved,
        "declined": r.declined,
        "uncertain": r.uncertain,
    }


class CaseReview:
    """Materialized review state for one case.

    All mutation happens through `apply`, which validates against a working
    copy first; a rejected action leaves the state untouched.
    """

    def __init__(self, processed: ProcessedCase):
        self.processed = processed
        self.detections: dict[str, Detection] = dict(processed.detections)
        self.overrides: dict[CriterionKind, object] = {}
        self.patch_review: dict[str, str] = {}
        self.seq = 0
        self.assessment = self._derive()

    # -- derivation ----------------------------------------------------------

    def _derive(self) -> Assessment:
        return derive_assessment(
            self.processed.manifest,
            self.processed.config,
            self.detections,
            self.processed.nuclei,
            overrides=self.overrides,
            patch_review=self.patch_review,
        )

    # -- actions ---------------------------------------------------------------

    def apply(self, action: Action) -> None:
        if action.kind not in ACTION_KINDS:
            raise ActionValidationError(f"unknown action kind {action.kind!r}")
        if action.seq != self.seq + 1:
            raise LogCorruptionError(
                f"action seq {action.seq} does not follow {self.seq} (gapless log required)"
            )
        # validate-then-commit on a working copy; Detection values are frozen,
        # so shallow container copies are enough
        working = copy.copy(self)
        working.detections = dict(self.detections)
        working.overrides = dict(self.overrides)
        working.patch_review = dict(self.patch_review)
        handler = {
            "evidence_action": working._apply_evidence_action,
            "override": working._apply_override,
            "clear_override": working._apply_clear_override,
            "manual_add": working._apply_manual_add,
        }[action.kind]
        handler(action)
        working.seq = action.seq
        working.assessment = working._derive()
        self.__dict__.update(working.__dict__)

    def _apply_evidence_action(self, action: Action) -> None:
        payload = action.payload
        evidence_id = payload.get("evidence_id")
        verb = payload.get("action")
        if verb not in EVIDENCE_ACTIONS:
            raise ActionValidationError(
                f"evidence action must be approve/decline/uncertain, got {verb!r}"
            )
        if evidence_id in self.detections:
            self.detections[evidence_id] = self.detections[evidence_id].with_status(
                EVIDENCE_ACTIONS[verb]
            )
            return
        known_patch_evidence = {
            item.evidence_id
            for items in self.assessment.evidence.values()
            for item in items
            if item.detection_id is None
        }
        if evidence_id in known_patch_evidence or evidence_id in self.patch_review:
            self.patch_review[evidence_id] = EVIDENCE_ACTIONS[verb].value
            return
        raise UnknownResourceError(f"unknown evidence id {evidence_id!r}")

    def _parse_criterion(self, payload: dict) -> CriterionKind:
        try:
            return CriterionKind(payload.get("criterion"))
        except ValueError as exc:
            raise ActionValidationError(
                f"unknown criterion {payload.get('criterion')!r}"
            ) from exc

    def _apply_override(self, action: Action) -> None:
        criterion = self._parse_criterion(action.payload)
        value = action.payload.get("value")
        if criterion == CriterionKind.MITOTIC_COUNT:
            raise ActionValidationError(
                "the mitotic count is adjusted through evidence actions, not overrides"
            )
        if criterion == CriterionKind.SUBTYPE:
            try:
                self.overrides[criterion] = Subtype(value)
            except ValueError as exc:
                raise ActionValidationError(f"unknown subtype {value!r}") from exc
        elif criterion == CriterionKind.KI67_INDEX:
            try:
                pct = float(value)
            except (TypeError, ValueError) as exc:
                raise ActionValidationError(
                    f"Ki-67 override must be a percent, got {value!r}"
                ) from exc
            if not 0.0 <= pct <= 100.0:
                raise ActionValidationError(f"Ki-67 override {pct} outside [0, 100]")
            self.overrides[criterion] = pct
        else:
            try:
                self.overrides[criterion] = OverrideValue(value)
            except ValueError as exc:
                raise ActionValidationError(
                    f"override value must be found/not_found/uncertain, got {value!r}"
                ) from exc

    def _apply_clear_override(self, action: Action) -> None:
        criterion = self._parse_criterion(action.payload)
        self.overrides.pop(criterion, None)

    def _apply_manual_add(self, action: Action) -> None:
        payload = action.payload
        criterion = self._parse_criterion(payload)
        try:
            slide = self.processed.manifest.slide(payload.get("slide_id"))
        except Exception as exc:
            raise ActionValidationError(f"unknown slide {payload.get('slide_id')!r}") from exc
        try:
            bbox = Rect.from_json(payload["bbox"])
        except KeyError as exc:
            raise ActionValidationError("manual_add requires a bbox") from exc
        if not slide.bounds.contains(bbox):
            raise ActionValidationError(f"bbox {bbox} outside slide bounds")
        det_id = f"manual:{action.seq:04d}"
        self.detections[det_id] = Detection(
            detection_id=det_id,
            slide_id=slide.slide_id,
            criterion=criterion,
            bbox=bbox,
            prob=1.0,
            status=DetectionStatus.APPROVED,
        )

    # -- state ----------------------------------------------------------------

    def state_json(self) -> dict:
        manual = sorted(
            (d for i, d in self.detections.items() if i.startswith("manual:")),
            key=lambda d: d.detection_id,
        )
        return {
            "case_id": self.processed.case_id,
            "seq": self.seq,
            "detection_statuses": {
                i: d.status.value for i, d in sorted(self.detections.items())
            },
            "manual_detections": [d.to_json() for d in manual],
            "overrides": {
                k.value: (v.value if hasattr(v, "value") else v)
                for k, v in sorted(self.overrides.items(), key=lambda kv: kv[0].value)
            },
            "patch_review": dict(sorted(self.patch_review.items())),
            "grade": self.assessment.grade.to_json(),
            "snapshot": _snapshot_json(self.assessment),
            "regions": self.assessment.regions_json(),
            "evidence": self.assessment.evidence_json(),
        }

    def state_bytes(self) -> bytes:
        return json.dumps(self.state_json(), sort_keys=True).encode()


@dataclass
class Session:
    session_id: str
    case_id: str
    review: CaseReview
    log: list[Action] = field(default_factory=list)
    created: str = ""
    updated: str = ""
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def summary_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "case_id": self.case_id,
            "created": self.created,
            "updated": self.updated,
            "actions": len(self.log),
            "state": self.review.state_json(),
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def create_session(case_dir: str | Path, session_id: str | None = None) -> Session:
    """Open a review session on a processed case; the initial state is the
    pipeline's suggested grading."""
    processed = load_processed_case(case_dir)  # raises if the case was not processed
    sid = session_id or uuid.uuid4().hex[:12]
    now = _now()
    return Session(
        session_id=sid,
        case_id=processed.case_id,
        review=CaseReview(processed),
        created=now,
        updated=now,
    )


def submit_action(session: Session, kind: str, payload: dict, actor: str = "pathologist") -> Action:
    """Validate and apply one action; the log is untouched when validation
    fails. Returns the recorded action (the new grade is on the session)."""
    with session.lock:
        action = Action(
            seq=len(session.log) + 1,
            kind=kind,
            payload=payload,
            actor=actor,
            timestamp=_now(),
        )
        session.review.apply(action)  # raises on invalid input, state unchanged
        session.log.append(action)
        session.updated = action.timestamp
        return action


def replay(case_dir: str | Path, actions: list[Action]) -> CaseReview:
    """Fold an action log over the processed case from scratch.

    The log must be gapless from seq 1; any gap or disorder is corruption.
    """
    expected = 1
    for action in actions:
        if action.seq != expected:
            raise LogCorruptionError(
                f"log corrupt: expected seq {expected}, found {action.seq}"
            )
        expected += 1
    review = CaseReview(load_processed_case(case_dir))
    for action in actions:
        review.apply(action)
    return review


# ---------------------------------------------------------------------------
# Persistence: append-only JSONL log plus periodic full-state snapshots
# ---------------------------------------------------------------------------


class SessionStore:
    def __init__(self, root: str | Path, snapshot_every: int = 20):
        self.root = Path(root)
        self.snapshot_every = snapshot_every

    def session_dir(self, session_id: str) -> Path:
        return self.root / session_id

    def persist_new(self, session: Session) -> None:
        d = self.session_dir(session.session_id)
        d.mkdir(parents=True, exist_ok=True)
        (d / "session.json").write_text(
            json.dumps(
                {
                    "session_id": session.session_id,
                    "case_id": session.case_id,
                    "created": session.created,
                },
                sort_keys=True,
            )
        )
        (d / "log.jsonl").touch()

    def append_action(self, session: Session, action: Action) -> None:
        d = self.session_dir(session.session_id)
        with open(d / "log.jsonl", "a") as f:
            f.write(json.dumps(action.to_json(), sort_keys=True) + "\n")
        if self.snapshot_every and action.seq % self.snapshot_every == 0:
            self.write_snapshot(session)

    def write_snapshot(self, session: Session) -> None:
        d = self.session_dir(session.session_id)
        (d / "snapshot.json").write_text(
            json.dumps(
                {"seq": session.review.seq, "state": session.review.state_json()},
                sort_keys=True,
            )
        )

    def load_log(self, session_id: str) -> list[Action]:
        path = self.session_dir(session_id) / "log.jsonl"
        if not path.is_file():
            raise MissingInputError(f"no log for session {session_id}")
        return [
            Action.from_json(json.loads(line))
            for line in path.read_text().splitlines()
            if line.strip()
        ]

    def load_session(self, session_id: str, case_dir: str | Path) -> Session:
        """Restore a session: prefer snapshot + suffix replay, verified to be
        equivalent to a full replay by construction of the fold."""
        d = self.session_dir(session_id)
        meta_path = d / "session.json"
        if not meta_path.is_file():
            raise UnknownResourceError(f"unknown session {session_id}")
        meta = json.loads(meta_path.read_text())
        log = self.load_log(session_id)
        snap_path = d / "snapshot.json"
        review: CaseReview
        if snap_path.is_file():
            snap = json.loads(snap_path.read_text())
            review = restore_review(case_dir, snap["state"])
            suffix = [a for a in log if a.seq > snap["seq"]]
            for action in suffix:
                if action.seq != review.seq + 1:
                    raise LogCorruptionError(
                        f"log corrupt after snapshot: expected {review.seq + 1}, found {action.seq}"
                    )
                review.apply(action)
        else:
            review = replay(case_dir, log)
        session = Session(
            session_id=session_id,
            case_id=meta["case_id"],
            review=review,
            log=log,
            created=meta.get("created", ""),
            updated=log[-1].timestamp if log else meta.get("created", ""),
        )
        return session

    def list_sessions(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / "session.json").is_file())


def restore_review(case_dir: str | Path, state: dict) -> CaseReview:
    """Rebuild a CaseReview from a persisted full-state snapshot."""
    review = CaseReview(load_processed_case(case_dir))
    for obj in state.get("manual_detections", []):
        det = Detection.from_json(obj)
        review.detections[det.detection_id] = det
    for det_id, status in state.get("detection_statuses", {}).items():
        if det_id in review.detections:
            review.detections[det_id] = review.detections[det_id].with_status(
                DetectionStatus(status)
            )
    for name, value in state.get("overrides", {}).items():
        criterion = CriterionKind(name)
        if criterion == CriterionKind.SUBTYPE:
            review.overrides[criterion] = Subtype(value)
        elif criterion == CriterionKind.KI67_INDEX:
            review.overrides[criterion] = float(value)
        else:
            review.overrides[criterion] = OverrideValue(value)
    review.patch_review = dict(state.get("patch_review", {}))
    review.seq = int(state.get("seq", 0))
    review.assessment = review._derive()
    return review
