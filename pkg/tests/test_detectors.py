import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meningrade.config import ThresholdTable
from meningrade.core import CriterionKind, Detection, Rect, iou
from meningrade.detectors import (
    DetectorBinding,
    DetectorKind,
    RawScore,
    apply_threshold,
    classify_region_type,
    confidence_level,
    count_nuclei,
    gaussian_saliency,
    ki67_index,
    nms,
    score_patches,
)
from meningrade.errors import ContractError, MissingScoreError
from meningrade.tiler import PatchRef

TABLE = ThresholdTable()


def _write_annotations(path, slide_id, objects):
    path.write_text(json.dumps({"slide_id": slide_id, "objects": objects}))
    return str(path)


def _patch(x, y, w=240, h=240, criterion=CriterionKind.MITOTIC_COUNT, slide="s1"):
    return PatchRef(slide_id=slide, rect=Rect(x, y, w, h), criterion_family=criterion)


class TestOracleScoring:
    def test_intersecting_object_scores_one(self, tmp_path):
        src = _write_annotations(
            tmp_path / "a.json",
            "s1",
            [{"criterion": "MitoticCount", "bbox": {"x": 100, "y": 100, "w": 30, "h": 20}, "label": "m"}],
        )
        binding = DetectorBinding(CriterionKind.MITOTIC_COUNT, DetectorKind.ORACLE_ANNOTATION, src)
        scores = list(score_patches(binding, [_patch(0, 0), _patch(480, 480)]))
        assert scores[0].prob == 1.0
        assert scores[0].saliency_raster is not None
        assert scores[1].prob == 0.0
        assert scores[1].saliency_raster is None

    def test_self_consistency_perfect_recall_and_precision(self, tmp_path):
        objects = [
            {"criterion": "MitoticCount", "bbox": {"x": 40 + 512 * i, "y": 40, "w": 30, "h": 20}, "label": "m"}
            for i in range(5)
        ]
        src = _write_annotations(tmp_path / "a.json", "s1", objects)
        binding = DetectorBinding(CriterionKind.MITOTIC_COUNT, DetectorKind.ORACLE_ANNOTATION, src)
        patches = [_patch(512 * i, 0) for i in range(8)]
        scores = list(score_patches(binding, patches))
        positives = {p.rect.x for p, s in zip(patches, scores) if s.prob > TABLE.mitosis}
        truth = {512 * i for i in range(5)}
        assert positives == truth  # recall 1.0 and precision 1.0 against its own file

    def test_gaussian_saliency_peaks_at_centroid(self):
        raster = gaussian_saliency(Rect(0, 0, 240, 240), (60, 120), out_px=96)
        py, px = np.unravel_index(np.argmax(raster), raster.shape)
        assert abs(px - 60 * 96 / 240) <= 1
        assert abs(py - 120 * 96 / 240) <= 1
        assert raster.max() == 255


class TestExternalScores:
    def test_pass_through(self, tmp_path):
        line = {
            "slide_id": "s1",
            "criterion": "MitoticCount",
            "rect": {"x": 0, "y": 0, "w": 240, "h": 240},
            "prob": 0.83,
            "saliency_path": None,
        }
        src = tmp_path / "scores.jsonl"
        src.write_text(json.dumps(line) + "\n")
        binding = DetectorBinding(CriterionKind.MITOTIC_COUNT, DetectorKind.EXTERNAL_SCORES, str(src))
        [score] = list(score_patches(binding, [_patch(0, 0)]))
        assert score.prob == 0.83

    def test_missing_score_is_hard_error(self, tmp_path):
        src = tmp_path / "scores.jsonl"
        src.write_text("")
        binding = DetectorBinding(CriterionKind.MITOTIC_COUNT, DetectorKind.EXTERNAL_SCORES, str(src))
        with pytest.raises(MissingScoreError):
            list(score_patches(binding, [_patch(0, 0)]))


class TestSyntheticHeuristics:
    def test_dark_blob_scores_as_mitosis(self):
        raster = np.full((240, 240, 3), 210, dtype=np.uint8)
        raster[100:124, 100:132] = (45, 30, 70)
        binding = DetectorBinding(CriterionKind.MITOTIC_COUNT, DetectorKind.SYNTHETIC_HEURISTIC, "")
        [score] = list(score_patches(binding, [_patch(0, 0)], [raster]))
        assert score.prob > TABLE.mitosis

    def test_plain_tissue_scores_low(self):
        raster = np.full((240, 240, 3), 210, dtype=np.uint8)
        binding = DetectorBinding(CriterionKind.MITOTIC_COUNT, DetectorKind.SYNTHETIC_HEURISTIC, "")
        [score] = list(score_patches(binding, [_patch(0, 0)], [raster]))
        assert score.prob <= TABLE.mitosis

    def test_gray_patch_scores_as_necrosis(self):
        raster = np.full((512, 512, 3), 0, dtype=np.uint8)
        raster[:] = (168, 165, 166)
        binding = DetectorBinding(CriterionKind.NECROSIS, DetectorKind.SYNTHETIC_HEURISTIC, "")
        [score] = list(
            score_patches(binding, [_patch(0, 0, 512, 512, CriterionKind.NECROSIS)], [raster])
        )
        assert score.prob > TABLE.necrosis


class TestApplyThreshold:
    @pytest.mark.parametrize(
        "criterion,prob,expected",
        [
            (CriterionKind.MITOTIC_COUNT, 0.79, True),
            (CriterionKind.MITOTIC_COUNT, 0.78, False),  # strict inequality
            (CriterionKind.NECROSIS, 0.75, True),
            (CriterionKind.NECROSIS, 0.74, False),
            (CriterionKind.PROMINENT_NUCLEOLI, 0.91, True),
            (CriterionKind.PROMINENT_NUCLEOLI, 0.90, False),
            (CriterionKind.SHEETING, 0.53, True),
            (CriterionKind.SHEETING, 0.52, False),
        ],
    )
    def test_strict_cutoffs(self, criterion, prob, expected):
        score = RawScore(patch=_patch(0, 0, criterion=criterion), prob=prob)
        assert apply_threshold(score, TABLE) is expected

    def test_criterion_without_threshold_is_contract_error(self):
        score = RawScore(patch=_patch(0, 0, criterion=CriterionKind.HYPERCELLULARITY), prob=0.5)
        with pytest.raises(ContractError):
            apply_threshold(score, TABLE)


class TestConfidence:
    def test_high_band(self):
        assert confidence_level(0.97, CriterionKind.MITOTIC_COUNT, TABLE) == "High"

    def test_medium_band(self):
        assert confidence_level(0.80, CriterionKind.MITOTIC_COUNT, TABLE) == "Medium"

    def test_at_threshold_is_not_a_detection(self):
        with pytest.raises(ContractError):
            confidence_level(0.78, CriterionKind.MITOTIC_COUNT, TABLE)

    def test_nucleoli_detections_are_always_high(self):
        assert confidence_level(0.91, CriterionKind.PROMINENT_NUCLEOLI, TABLE) == "High"


def _det(x, y, prob, ident=None, w=240, h=240):
    return Detection(
        detection_id=ident or f"d{x}-{y}-{prob}",
        slide_id="s1",
        criterion=CriterionKind.MITOTIC_COUNT,
        bbox=Rect(x, y, w, h),
        prob=prob,
    )


class TestNms:
    def test_identical_boxes_keep_highest(self):
        kept = nms([_det(0, 0, 0.9, "a"), _det(0, 0, 0.8, "b")], 0.25)
        assert [d.detection_id for d in kept] == ["a"]

    def test_half_stride_overlap_suppressed(self):
        # offset (120,0): iou = 1/3 > 0.25
        kept = nms([_det(0, 0, 0.9), _det(120, 0, 0.8)], 0.25)
        assert len(kept) == 1
        assert kept[0].prob == 0.9

    def test_disjoint_both_kept(self):
        kept = nms([_det(0, 0, 0.9), _det(1000, 1000, 0.8)], 0.25)
        assert len(kept) == 2

    def test_output_sorted_by_prob(self):
        kept = nms([_det(0, 0, 0.5), _det(1000, 0, 0.9), _det(2000, 0, 0.7)], 0.25)
        assert [d.prob for d in kept] == [0.9, 0.7, 0.5]

    def test_mixed_slides_rejected(self):
        a = _det(0, 0, 0.9)
        b = Detection("x", "other", CriterionKind.MITOTIC_COUNT, Rect(0, 0, 240, 240), 0.5)
        with pytest.raises(ContractError):
            nms([a, b])

    @settings(max_examples=60, deadline=None)
    @given(
        data=st.lists(
            st.tuples(
                st.integers(0, 1200), st.integers(0, 1200), st.floats(0.01, 1.0)
            ),
            min_size=1,
            max_size=24,
        ),
        seed=st.integers(0, 2**31),
    )
    def test_permutation_invariant_and_iou_bounded(self, data, seed):
        dets = [
            _det(x - x % 8, y - y % 8, round(p, 3), f"id{i}")
            for i, (x, y, p) in enumerate(data)
        ]
        kept = nms(dets, 0.25)
        rng = np.random.default_rng(seed)
        shuffled = [dets[i] for i in rng.permutation(len(dets))]
        kept2 = nms(shuffled, 0.25)
        assert [d.detection_id for d in kept] == [d.detection_id for d in kept2]
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert iou(a.bbox, b.bbox) <= 0.25


class TestCountNuclei:
    def test_oracle_counts_points_in_patch(self, tmp_path):
        objects = [
            {"criterion": "Hypercellularity", "point": {"x": 10 + i, "y": 20}, "label": "nucleus"}
            for i in range(60)
        ]
        src = _write_annotations(tmp_path / "a.json", "s1", objects)
        binding = DetectorBinding(CriterionKind.HYPERCELLULARITY, DetectorKind.ORACLE_ANNOTATION, src)
        res = count_nuclei(binding, _patch(0, 0, 512, 512, CriterionKind.HYPERCELLULARITY))
        assert res.count == 60
        assert len(res.centroids) == 60

    def test_oracle_blank_patch_counts_zero(self, tmp_path):
        src = _write_annotations(tmp_path / "a.json", "s1", [])
        binding = DetectorBinding(CriterionKind.HYPERCELLULARITY, DetectorKind.ORACLE_ANNOTATION, src)
        res = count_nuclei(binding, _patch(0, 0, 512, 512, CriterionKind.HYPERCELLULARITY))
        assert res.count == 0

    def test_synthetic_counts_planted_blobs_exactly(self):
        from meningrade.synth import NUCLEUS_COLOR, _jittered_points

        raster = np.full((512, 512, 3), 220, dtype=np.uint8)
        rng = np.random.default_rng(5)
        pts = _jittered_points(Rect(0, 0, 512, 512), 130, rng, radius=5)
        ys, xs = np.mgrid[0:512, 0:512]
        for cx, cy in pts:
            mask = ((xs - cx) / 5.0) ** 2 + ((ys - cy) / 4.0) ** 2 <= 1.0
            raster[mask] = NUCLEUS_COLOR
        binding = DetectorBinding(CriterionKind.HYPERCELLULARITY, DetectorKind.SYNTHETIC_HEURISTIC, "")
        res = count_nuclei(
            binding, _patch(0, 0, 512, 512, CriterionKind.HYPERCELLULARITY), raster
        )
        assert res.count == 130

    def test_ki67_polarity_from_labels(self, tmp_path):
        objects = [
            {"criterion": "Ki67Index", "point": {"x": 10, "y": 10}, "label": "positive"},
            {"criterion": "Ki67Index", "point": {"x": 20, "y": 10}, "label": "negative"},
            {"criterion": "Ki67Index", "point": {"x": 30, "y": 10}, "label": "negative"},
        ]
        src = _write_annotations(tmp_path / "a.json", "s1", objects)
        binding = DetectorBinding(CriterionKind.KI67_INDEX, DetectorKind.ORACLE_ANNOTATION, src)
        res = count_nuclei(binding, _patch(0, 0, 512, 512, CriterionKind.KI67_INDEX))
        assert res.positive_count == 1
        assert res.negative_count == 2


class TestKi67Index:
    def test_formula(self):
        assert ki67_index(30, 70) == Fraction(30)
        assert float(ki67_index(30, 70)) == 30.0

    def test_zero_positive(self):
        assert ki67_index(0, 100) == 0

    def test_all_positive(self):
        assert ki67_index(5, 0) == 100

    def test_no_nuclei_is_not_applicable(self):
        assert ki67_index(0, 0) is None

    @given(p=st.integers(0, 10_000), n=st.integers(0, 10_000))
    def test_bounded(self, p, n):
        v = ki67_index(p, n)
        if p + n == 0:
            assert v is None
        else:
            assert 0 <= v <= 100

    @given(p=st.integers(1, 10_000), n=st.integers(1, 10_000))
    def test_complement_sums_to_100_exactly(self, p, n):
        assert ki67_index(p, n) + ki67_index(n, p) == 100


class TestClassifyRegionType:
    @pytest.mark.parametrize(
        "count,expected",
        [
            (60, "tumor"),
            (56, "tumor"),
            (55, "brain"),
            (30, "brain"),
            (10, "brain"),
            (9, "background"),
            (5, "background"),
            (0, "background"),
        ],
    )
    def test_boundaries(self, count, expected):
        assert classify_region_type(count, TABLE) == expected

    def test_monotone_step_function(self):
        order = {"background": 0, "brain": 1, "tumor": 2}
        last = -1
        for count in range(0, 200):
            level = order[classify_region_type(count, TABLE)]
            assert level >= last
            last = level
