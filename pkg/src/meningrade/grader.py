"""WHO 2007 meningioma grading rules as a deterministic engine over criterion
states, with main-contributing-criterion attribution.

Grade III: 20+ mitoses per 10 consecutive HPFs, or a frank-anaplasia /
papillary / rhabdoid subtype. Grade II: 4-19 mitoses, or at least three of the
five histological features, or brain invasion, or a clear-cell / chordoid
subtype. Grade I otherwise. The Ki-67 index is surfaced as supporting evidence
but never alters the grade.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping

from .aggregator import RegionSample
from .core import CriterionKind, Detection, DetectionStatus, FIVE_FEATURES
from .errors import ActionValidationError


class Grade(str, Enum):
    I = "I"
    II = "II"
    III = "III"


class Subtype(str, Enum):
    OTHER = "other"
    CLEAR_CELL = "clear_cell"
    CHORDOID = "chordoid"
    PAPILLARY = "papillary"
    RHABDOID = "rhabdoid"
    FRANK_ANAPLASIA = "frank_anaplasia"


GRADE_II_SUBTYPES = (Subtype.CLEAR_CELL, Subtype.CHORDOID)
GRADE_III_SUBTYPES = (Subtype.FRANK_ANAPLASIA, Subtype.PAPILLARY, Subtype.RHABDOID)


class Suggestion(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"
    UNCONFIRMED = "unconfirmed"
    NOT_APPLICABLE = "not_applicable"


class OverrideValue(str, Enum):
    FOUND = "found"
    NOT_FOUND = "not_found"
    UNCERTAIN = "uncertain"


class EffectiveStatus(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"
    UNCERTAIN = "uncertain"
    NOT_APPLICABLE = "not_applicable"


class Color(str, Enum):
    RED = "red"
    GREEN = "green"
    ORANGE = "orange"
    GRAY = "gray"


@dataclass(frozen=True)
class ReviewSummary:
    """Evidence review tallies for one criterion (display only)."""

    unreviewed: int = 0
    approved: int = 0
    declined: int = 0
    uncertain: int = 0

    @property
    def total(self) -> int:
        return self.unreviewed + self.approved + self.declined + self.uncertain


@dataclass(frozen=True)
class CriterionState:
    kind: CriterionKind
    ai_suggestion: Suggestion
    ai_value: float | int | None = None
    override: OverrideValue | None = None
    review: ReviewSummary | None = None


def effective_status(state: CriterionState) -> EffectiveStatus:
    """Status that drives the grade: the override wins when set, otherwise the
    AI suggestion flows through (an unreviewed positive still counts as present
    for the suggested grade)."""
    if state.override is not None:
        return {
            OverrideValue.FOUND: EffectiveStatus.PRESENT,
            OverrideValue.NOT_FOUND: EffectiveStatus.ABSENT,
            OverrideValue.UNCERTAIN: EffectiveStatus.UNCERTAIN,
        }[state.override]
    return {
        Suggestion.PRESENT: EffectiveStatus.PRESENT,
        Suggestion.ABSENT: EffectiveStatus.ABSENT,
        Suggestion.UNCONFIRMED: EffectiveStatus.UNCERTAIN,
        Suggestion.NOT_APPLICABLE: EffectiveStatus.NOT_APPLICABLE,
    }[state.ai_suggestion]


def display_color(state: CriterionState) -> Color:
    """Status color: red = confirmed present, green = confirmed absent,
    orange = unconfirmed or uncertain, gray = not applicable.

    Without an override, a criterion is unconfirmed (orange) unless a complete
    evidence review settles it: every item reviewed with at least one approval
    confirms presence; every item reviewed and all declined confirms absence.
    """
    if state.override is not None:
        return {
            OverrideValue.FOUND: Color.RED,
            OverrideValue.NOT_FOUND: Color.GREEN,
            OverrideValue.UNCERTAIN: Color.ORANGE,
        }[state.override]
    if state.ai_suggestion == Suggestion.NOT_APPLICABLE:
        return Color.GRAY
    r = state.review
    if r is not None and r.total > 0 and r.unreviewed == 0 and r.uncertain == 0:
        if r.approved > 0 and state.ai_suggestion == Suggestion.PRESENT:
            return Color.RED
        if r.approved == 0:
            return Color.GREEN
    return Color.ORANGE


def effective_mitotic_count(
    region: RegionSample,
    detections: Mapping[str, Detection],
    include_uncertain: bool = False,
) -> int:
    """Mitoses counted inside a sampled region: unreviewed and approved
    detections (plus user-added ones, which arrive approved); declined are
    excluded, declare-uncertain excluded unless configured otherwise."""
    total = 0
    for d in detections.values():
        if d.criterion != CriterionKind.MITOTIC_COUNT or d.slide_id != region.slide_id:
            continue
        if d.status == DetectionStatus.DECLINED:
            continue
        if d.status == DetectionStatus.UNCERTAIN and not include_uncertain:
            continue
        if region.rect.contains_point(*d.bbox.center()):
            total += 1
    return total


@dataclass(frozen=True)
class CriteriaSnapshot:
    mitotic_count_10hpf: int
    feature_states: tuple[CriterionState, ...]
    brain_invasion: CriterionState
    ki67_percent: float | None = None
    ki67_applicable: bool = True
    ki67_override: float | None = None
    subtype: Subtype = Subtype.OTHER
    subtype_set: bool = False
    mitosis_review: ReviewSummary | None = None

    def __post_init__(self):
        if self.mitotic_count_10hpf < 0:
            raise ActionValidationError("mitotic count must be non-negative")
        kinds = tuple(s.kind for s in self.feature_states)
        if kinds != FIVE_FEATURES:
            raise ActionValidationError(
                f"feature_states must be exactly the five features in order, got {kinds}"
            )

    def feature(self, kind: CriterionKind) -> CriterionState:
        for s in self.feature_states:
            if s.kind == kind:
                return s
        raise ActionValidationError(f"{kind.value} is not one of the five features")

    @property
    def ki67_display(self) -> float | None:
        return self.ki67_override if self.ki67_override is not None else self.ki67_percent


@dataclass(frozen=True)
class FiredRule:
    rule_id: str
    text: str

    def to_json(self) -> dict:
        return {"id": self.rule_id, "text": self.text}


RULE_III_MITOTIC = FiredRule("grade-iii-mitoses", "20 or more mitoses per 10 consecutive HPFs")
RULE_III_SUBTYPE = FiredRule("grade-iii-subtype", "frank anaplasia, papillary, or rhabdoid subtype")
RULE_II_MITOTIC = FiredRule("grade-ii-mitoses", "4 to 19 mitoses per 10 consecutive HPFs")
RULE_II_SUBTYPE = FiredRule("grade-ii-subtype", "clear cell or chordoid subtype")
RULE_II_INVASION = FiredRule("grade-ii-invasion", "brain invasion observed")
RULE_II_FEATURES = FiredRule(
    "grade-ii-features", "at least three of five histological features present"
)


@dataclass(frozen=True)
class GradeResult:
    grade: Grade
    main_contributing: CriterionKind | None
    fired_rules: tuple[FiredRule, ...]
    criteria: tuple[dict, ...] = ()

    def to_json(self) -> dict:
        return {
            "grade": self.grade.value,
            "main_contributing": self.main_contributing.value if self.main_contributing else None,
            "fired_rules": [r.to_json() for r in self.fired_rules],
            "criteria": list(self.criteria),
        }


def _present_features(s: CriteriaSnapshot) -> list[CriterionKind]:
    return [
        st.kind
        for st in s.feature_states
        if effective_status(st) == EffectiveStatus.PRESENT
    ]


def compute_grade(s: CriteriaSnapshot) -> GradeResult:
    """Pure, total grading function. Fired rules are listed in precedence
    order (mitoses, subtype, invasion, three-of-five within each grade); the
    main contributing criterion is the first rule fired at the result grade."""
    count = s.mitotic_count_10hpf
    present = _present_features(s)
    invasion = effective_status(s.brain_invasion) == EffectiveStatus.PRESENT

    fired: list[tuple[FiredRule, CriterionKind]] = []
    if count >= 20:
        fired.append((RULE_III_MITOTIC, CriterionKind.MITOTIC_COUNT))
    if s.subtype in GRADE_III_SUBTYPES:
        fired.append((RULE_III_SUBTYPE, CriterionKind.SUBTYPE))
    grade_iii_fired = len(fired)
    if 4 <= count <= 19:
        fired.append((RULE_II_MITOTIC, CriterionKind.MITOTIC_COUNT))
    if s.subtype in GRADE_II_SUBTYPES:
        fired.append((RULE_II_SUBTYPE, CriterionKind.SUBTYPE))
    if invasion:
        fired.append((RULE_II_INVASION, CriterionKind.BRAIN_INVASION))
    if len(present) >= 3:
        contributor = present[0]  # first present feature in guideline order
        fired.append((RULE_II_FEATURES, contributor))

    if grade_iii_fired:
        grade = Grade.III
    elif fired:
        grade = Grade.II
    else:
        grade = Grade.I
    main = fired[0][1] if fired else None
    return GradeResult(
        grade=grade,
        main_contributing=main,
        fired_rules=tuple(r for r, _ in fired),
        criteria=tuple(criteria_rows(s)),
    )


_PANEL_ORDER = (
    CriterionKind.MITOTIC_COUNT,
    CriterionKind.KI67_INDEX,
    CriterionKind.HYPERCELLULARITY,
    CriterionKind.PROMINENT_NUCLEOLI,
    CriterionKind.SHEETING,
    CriterionKind.NECROSIS,
    CriterionKind.SMALL_CELL,
    CriterionKind.BRAIN_INVASION,
    CriterionKind.SUBTYPE,
)


def mitosis_state(s: CriteriaSnapshot) -> CriterionState:
    return CriterionState(
        kind=CriterionKind.MITOTIC_COUNT,
        ai_suggestion=Suggestion.PRESENT if s.mitotic_count_10hpf >= 4 else Suggestion.ABSENT,
        ai_value=s.mitotic_count_10hpf,
        review=s.mitosis_review,
    )


def ki67_state(s: CriteriaSnapshot) -> CriterionState:
    if not s.ki67_applicable:
        return CriterionState(
            kind=CriterionKind.KI67_INDEX, ai_suggestion=Suggestion.NOT_APPLICABLE
        )
    return CriterionState(
        kind=CriterionKind.KI67_INDEX,
        ai_suggestion=Suggestion.UNCONFIRMED,
        ai_value=s.ki67_display,
    )


def subtype_row(s: CriteriaSnapshot) -> dict:
    if not s.subtype_set:
        status, color = Suggestion.UNCONFIRMED.value, Color.ORANGE.value
    elif s.subtype == Subtype.OTHER:
        status, color = EffectiveStatus.ABSENT.value, Color.GREEN.value
    else:
        status, color = EffectiveStatus.PRESENT.value, Color.RED.value
    return {
        "kind": CriterionKind.SUBTYPE.value,
        "status": status,
        "color": color,
        "value": s.subtype.value,
    }


def criteria_rows(s: CriteriaSnapshot) -> list[dict]:
    """Per-criterion display rows (status, color, value) in panel order."""
    states = {st.kind: st for st in s.feature_states}
    states[CriterionKind.BRAIN_INVASION] = s.brain_invasion
    states[CriterionKind.MITOTIC_COUNT] = mitosis_state(s)
    states[CriterionKind.KI67_INDEX] = ki67_state(s)
    rows = []
    for kind in _PANEL_ORDER:
        if kind == CriterionKind.SUBTYPE:
            rows.append(subtype_row(s))
            continue
        st = states[kind]
        row = {
            "kind": kind.value,
            "status": effective_status(st).value,
            "color": display_color(st).value,
        }
        if st.ai_value is not None:
            row["value"] = st.ai_value
        rows.append(row)
    return rows


_OVERRIDABLE = set(FIVE_FEATURES) | {
    CriterionKind.BRAIN_INVASION,
    CriterionKind.SUBTYPE,
    CriterionKind.KI67_INDEX,
}


def apply_override(
    snapshot: CriteriaSnapshot, criterion: CriterionKind, value
) -> tuple[CriteriaSnapshot, GradeResult]:
    """Set (or clear, with value None) a human override and regrade.

    All criteria are overridable except the raw mitotic count, which is
    adjusted through evidence actions or manual additions.
    """
    if criterion not in _OVERRIDABLE:
        raise ActionValidationError(f"criterion {criterion.value} is not overridable")
    if criterion == CriterionKind.SUBTYPE:
        if value is None:
            updated = replace(snapshot, subtype=Subtype.OTHER, subtype_set=False)
        else:
            try:
                updated = replace(snapshot, subtype=Subtype(value), subtype_set=True)
            except ValueError as exc:
                raise ActionValidationError(f"unknown subtype {value!r}") from exc
    elif criterion == CriterionKind.KI67_INDEX:
        if value is None:
            updated = replace(snapshot, ki67_override=None)
        else:
            try:
                pct = float(value)
            except (TypeError, ValueError) as exc:
                raise ActionValidationError(f"Ki-67 override must be a percent, got {value!r}") from exc
            if not 0.0 <= pct <= 100.0:
                raise ActionValidationError(f"Ki-67 override {pct} outside [0, 100]")
            updated = replace(snapshot, ki67_override=pct)
    else:
        if value is None:
            ov = None
        else:
            try:
                ov = OverrideValue(value)
            except ValueError as exc:
                raise ActionValidationError(
                    f"override must be found/not_found/uncertain, got {value!r}"
                ) from exc
        if criterion == CriterionKind.BRAIN_INVASION:
            updated = replace(snapshot, brain_invasion=replace(snapshot.brain_invasion, override=ov))
        else:
            features = tuple(
                replace(st, override=ov) if st.kind == criterion else st
                for st in snapshot.feature_states
            )
            updated = replace(snapshot, feature_states=features)
    return updated, compute_grade(updated)
