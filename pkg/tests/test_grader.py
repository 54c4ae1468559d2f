import pytest
from hypothesis import given, strategies as st

from meningrade.aggregator import RegionSample, SampleKind
from meningrade.core import CriterionKind, Detection, DetectionStatus, FIVE_FEATURES, Rect
from meningrade.errors import ActionValidationError
from meningrade.grader import (
    Color,
    CriteriaSnapshot,
    CriterionState,
    EffectiveStatus,
    Grade,
    OverrideValue,
    ReviewSummary,
    Subtype,
    Suggestion,
    apply_override,
    compute_grade,
    display_color,
    effective_mitotic_count,
    effective_status,
)


def _state(kind, ai=Suggestion.ABSENT, override=None, review=None):
    return CriterionState(kind=kind, ai_suggestion=ai, override=override, review=review)


def snapshot(
    mitoses=0,
    present=(),
    uncertain=(),
    invasion=False,
    invasion_uncertain=False,
    subtype=Subtype.OTHER,
    ki67=None,
    overrides=None,
):
    overrides = overrides or {}
    features = []
    for kind in FIVE_FEATURES:
        if kind in present:
            ai = Suggestion.PRESENT
        elif kind in uncertain:
            ai = Suggestion.UNCONFIRMED
        else:
            ai = Suggestion.ABSENT
        features.append(_state(kind, ai=ai, override=overrides.get(kind)))
    if invasion:
        inv_ai = Suggestion.PRESENT
    elif invasion_uncertain:
        inv_ai = Suggestion.UNCONFIRMED
    else:
        inv_ai = Suggestion.ABSENT
    return CriteriaSnapshot(
        mitotic_count_10hpf=mitoses,
        feature_states=tuple(features),
        brain_invasion=_state(
            CriterionKind.BRAIN_INVASION, ai=inv_ai, override=overrides.get(CriterionKind.BRAIN_INVASION)
        ),
        ki67_percent=ki67,
        ki67_applicable=ki67 is not None,
        subtype=subtype,
        subtype_set=subtype != Subtype.OTHER,
    )


HYPER = CriterionKind.HYPERCELLULARITY
NUCLEOLI = CriterionKind.PROMINENT_NUCLEOLI
SHEET = CriterionKind.SHEETING
NECROSIS = CriterionKind.NECROSIS
SMALL = CriterionKind.SMALL_CELL


class TestEffectiveStatus:
    def test_ai_present_no_override(self):
        s = _state(NECROSIS, ai=Suggestion.PRESENT)
        assert effective_status(s) == EffectiveStatus.PRESENT

    def test_override_not_found_wins(self):
        s = _state(NECROSIS, ai=Suggestion.PRESENT, override=OverrideValue.NOT_FOUND)
        assert effective_status(s) == EffectiveStatus.ABSENT

    def test_override_found_on_unconfirmed(self):
        s = _state(HYPER, ai=Suggestion.UNCONFIRMED, override=OverrideValue.FOUND)
        assert effective_status(s) == EffectiveStatus.PRESENT

    def test_unconfirmed_maps_to_uncertain(self):
        s = _state(HYPER, ai=Suggestion.UNCONFIRMED)
        assert effective_status(s) == EffectiveStatus.UNCERTAIN


class TestDisplayColor:
    # the full 12-combination mapping: {present, absent, unconfirmed} x
    # {no override, found, not_found, uncertain}
    @pytest.mark.parametrize(
        "ai", [Suggestion.PRESENT, Suggestion.ABSENT, Suggestion.UNCONFIRMED]
    )
    @pytest.mark.parametrize(
        "override,expected",
        [
            (OverrideValue.FOUND, Color.RED),
            (OverrideValue.NOT_FOUND, Color.GREEN),
            (OverrideValue.UNCERTAIN, Color.ORANGE),
            (None, Color.ORANGE),
        ],
    )
    def test_twelve_combinations(self, ai, override, expected):
        assert display_color(_state(NECROSIS, ai=ai, override=override)) == expected

    def test_not_applicable_is_gray(self):
        assert display_color(_state(CriterionKind.KI67_INDEX, ai=Suggestion.NOT_APPLICABLE)) == Color.GRAY

    def test_fully_approved_review_confirms_presence(self):
        s = _state(
            NECROSIS,
            ai=Suggestion.PRESENT,
            review=ReviewSummary(unreviewed=0, approved=3, declined=0, uncertain=0),
        )
        assert display_color(s) == Color.RED

    def test_all_declined_review_confirms_absence(self):
        s = _state(
            NECROSIS,
            ai=Suggestion.ABSENT,
            review=ReviewSummary(unreviewed=0, approved=0, declined=3, uncertain=0),
        )
        assert display_color(s) == Color.GREEN

    def test_partial_review_stays_orange(self):
        s = _state(
            NECROSIS,
            ai=Suggestion.PRESENT,
            review=ReviewSummary(unreviewed=1, approved=2, declined=0, uncertain=0),
        )
        assert display_color(s) == Color.ORANGE


class TestGradeTruthTable:
    @pytest.mark.parametrize(
        "snap,expected_grade,expected_main",
        [
            # mitotic boundaries
            (snapshot(mitoses=3), Grade.I, None),
            (snapshot(mitoses=4), Grade.II, CriterionKind.MITOTIC_COUNT),
            (snapshot(mitoses=19), Grade.II, CriterionKind.MITOTIC_COUNT),
            (snapshot(mitoses=20), Grade.III, CriterionKind.MITOTIC_COUNT),
            (snapshot(mitoses=0), Grade.I, None),
            # three-of-five features
            (snapshot(present=(HYPER, SHEET)), Grade.I, None),
            (snapshot(present=(HYPER, SHEET, NECROSIS)), Grade.II, HYPER),
            (snapshot(present=FIVE_FEATURES), Grade.II, HYPER),
            (snapshot(present=(NUCLEOLI, NECROSIS, SMALL)), Grade.II, NUCLEOLI),
            # invasion
            (snapshot(invasion=True), Grade.II, CriterionKind.BRAIN_INVASION),
            (snapshot(invasion_uncertain=True), Grade.I, None),
            # subtype rules
            (snapshot(subtype=Subtype.CLEAR_CELL), Grade.II, CriterionKind.SUBTYPE),
            (snapshot(subtype=Subtype.CHORDOID), Grade.II, CriterionKind.SUBTYPE),
            (snapshot(subtype=Subtype.PAPILLARY), Grade.III, CriterionKind.SUBTYPE),
            (snapshot(subtype=Subtype.RHABDOID), Grade.III, CriterionKind.SUBTYPE),
            (snapshot(subtype=Subtype.FRANK_ANAPLASIA), Grade.III, CriterionKind.SUBTYPE),
            (snapshot(mitoses=0, subtype=Subtype.RHABDOID), Grade.III, CriterionKind.SUBTYPE),
            # combinations and precedence
            (snapshot(mitoses=25, invasion=True), Grade.III, CriterionKind.MITOTIC_COUNT),
            (snapshot(mitoses=4, subtype=Subtype.RHABDOID), Grade.III, CriterionKind.SUBTYPE),
            (snapshot(mitoses=4, present=(HYPER, SHEET, NECROSIS)), Grade.II, CriterionKind.MITOTIC_COUNT),
            (snapshot(mitoses=2, uncertain=(HYPER, SHEET, NECROSIS)), Grade.I, None),
            # Ki-67 never alters the grade
            (snapshot(ki67=35.0), Grade.I, None),
            (snapshot(mitoses=20, ki67=1.0), Grade.III, CriterionKind.MITOTIC_COUNT),
        ],
    )
    def test_rules(self, snap, expected_grade, expected_main):
        result = compute_grade(snap)
        assert result.grade == expected_grade
        assert result.main_contributing == expected_main

    def test_fired_rules_non_empty_iff_grade_above_one(self):
        assert compute_grade(snapshot(mitoses=3)).fired_rules == ()
        result = compute_grade(snapshot(mitoses=25, invasion=True, subtype=Subtype.CLEAR_CELL))
        ids = [r.rule_id for r in result.fired_rules]
        assert ids == [
            "grade-iii-mitoses",
            "grade-ii-subtype",
            "grade-ii-invasion",
        ]
        result2 = compute_grade(snapshot(mitoses=7, invasion=True, subtype=Subtype.CLEAR_CELL))
        assert [r.rule_id for r in result2.fired_rules] == [
            "grade-ii-mitoses",
            "grade-ii-subtype",
            "grade-ii-invasion",
        ]

    def test_pure_and_deterministic(self):
        snap = snapshot(mitoses=7, present=(HYPER, SHEET, NECROSIS), ki67=12.0)
        a = compute_grade(snap)
        b = compute_grade(snap)
        assert a.to_json() == b.to_json()


class TestGradeMonotonicity:
    @given(
        mitoses=st.integers(0, 40),
        n_present=st.integers(0, 5),
        invasion=st.booleans(),
        subtype=st.sampled_from(list(Subtype)),
    )
    def test_adding_a_feature_never_lowers(self, mitoses, n_present, invasion, subtype):
        rank = {Grade.I: 1, Grade.II: 2, Grade.III: 3}
        base = snapshot(
            mitoses=mitoses,
            present=FIVE_FEATURES[:n_present],
            invasion=invasion,
            subtype=subtype,
        )
        more = snapshot(
            mitoses=mitoses + 1,
            present=FIVE_FEATURES[: min(5, n_present + 1)],
            invasion=invasion,
            subtype=subtype,
        )
        assert rank[compute_grade(more).grade] >= rank[compute_grade(base).grade]


class TestApplyOverride:
    def test_completing_three_of_five(self):
        snap = snapshot(present=(HYPER, SHEET))
        assert compute_grade(snap).grade == Grade.I
        snap2, result = apply_override(snap, NECROSIS, "found")
        assert result.grade == Grade.II

    def test_removing_sole_invasion_rule(self):
        snap = snapshot(invasion=True)
        snap2, result = apply_override(snap, CriterionKind.BRAIN_INVASION, "not_found")
        assert result.grade == Grade.I

    def test_uncertain_keeps_other_rules(self):
        snap = snapshot(mitoses=7, present=(SHEET,))
        snap2, result = apply_override(snap, SHEET, "uncertain")
        assert result.grade == Grade.II
        row = {r["kind"]: r for r in result.criteria}
        assert row["Sheeting"]["color"] == "orange"

    def test_round_trip_restores_grade(self):
        snap = snapshot(mitoses=5, present=(HYPER, SHEET))
        before = compute_grade(snap)
        snap2, _ = apply_override(snap, NECROSIS, "found")
        snap3, after = apply_override(snap2, NECROSIS, None)
        assert after.grade == before.grade
        assert after.to_json() == before.to_json()

    def test_mitotic_count_not_overridable(self):
        with pytest.raises(ActionValidationError):
            apply_override(snapshot(), CriterionKind.MITOTIC_COUNT, "found")

    def test_ki67_requires_percent(self):
        with pytest.raises(ActionValidationError):
            apply_override(snapshot(ki67=10.0), CriterionKind.KI67_INDEX, "high")
        with pytest.raises(ActionValidationError):
            apply_override(snapshot(ki67=10.0), CriterionKind.KI67_INDEX, 250.0)
        snap2, _ = apply_override(snapshot(ki67=10.0), CriterionKind.KI67_INDEX, 22.5)
        assert snap2.ki67_display == 22.5

    def test_subtype_override(self):
        snap2, result = apply_override(snapshot(), CriterionKind.SUBTYPE, "chordoid")
        assert result.grade == Grade.II


class TestEffectiveMitoticCount:
    def _region(self):
        return RegionSample(
            slide_id="s1",
            kind=SampleKind.REGION_10HPF,
            rect=Rect(0, 0, 10000, 4000),
            value=None,
        )

    def _dets(self, n, status=DetectionStatus.UNREVIEWED):
        return {
            f"d{i}": Detection(
                f"d{i}", "s1", CriterionKind.MITOTIC_COUNT, Rect(100 * i + 10, 50, 40, 30), 1.0, status=status
            )
            for i in range(n)
        }

    def test_unreviewed_count(self):
        assert effective_mitotic_count(self._region(), self._dets(4)) == 4

    def test_decline_excludes(self):
        dets = self._dets(4)
        dets["d0"] = dets["d0"].with_status(DetectionStatus.DECLINED)
        assert effective_mitotic_count(self._region(), dets) == 3

    def test_uncertain_excluded_by_default_configurable(self):
        dets = self._dets(4)
        dets["d0"] = dets["d0"].with_status(DetectionStatus.UNCERTAIN)
        assert effective_mitotic_count(self._region(), dets) == 3
        assert effective_mitotic_count(self._region(), dets, include_uncertain=True) == 4

    def test_manual_additions_increment(self):
        dets = self._dets(19)
        for i in range(5):
            det_id = f"manual:{i}"
            dets[det_id] = Detection(
                det_id,
                "s1",
                CriterionKind.MITOTIC_COUNT,
                Rect(3000 + 60 * i, 200, 40, 30),
                1.0,
                status=DetectionStatus.APPROVED,
            )
        assert effective_mitotic_count(self._region(), dets) == 24

    def test_outside_region_not_counted(self):
        dets = self._dets(3)
        dets["far"] = Detection(
            "far", "s1", CriterionKind.MITOTIC_COUNT, Rect(19000, 19000, 40, 30), 1.0
        )
        assert effective_mitotic_count(self._region(), dets) == 3
