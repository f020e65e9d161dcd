import math

import numpy as np
import pytest

from ballotgate import detector, imaging, synth
from ballotgate.detector import (
    Cascade,
    CascadeStage,
    HaarFeature,
    TrainingError,
    WeakClassifier,
    cascade_from_json,
    cascade_to_json,
    detect_faces,
    ensemble_predict,
    enumerate_features,
    eval_feature,
    train_adaboost,
    train_cascade,
)
from ballotgate.imaging import NORMALIZED, RAW8, GrayImage, Rect, integral_image


def norm_img(data):
    return GrayImage(np.asarray(data, dtype=np.float64), NORMALIZED)


def exhaustive_placements(side):
    """Brute-force oracle: test every (kind, x, y, w, h) for fit."""
    grids = {
        "two_rect_h": (2, 1),
        "two_rect_v": (1, 2),
        "three_rect_h": (3, 1),
        "three_rect_v": (1, 3),
        "four_rect": (2, 2),
    }
    counts = {}
    for kind, (cx, cy) in grids.items():
        n = 0
        for w in range(1, side + 1):
            for h in range(1, side + 1):
                if w % cx or h % cy:
                    continue
                for y in range(side):
                    for x in range(side):
                        if x + w <= side and y + h <= side:
                            n += 1
        counts[kind] = n
    return counts


class TestEnumeration:
    def test_count_at_24(self):
        assert len(enumerate_features(24)) == 162336

    def test_per_kind_counts_at_24(self):
        feats = enumerate_features(24)
        by_kind = {}
        for f in feats:
            by_kind[f.kind] = by_kind.get(f.kind, 0) + 1
        assert by_kind == {
            "two_rect_h": 43200,
            "two_rect_v": 43200,
            "three_rect_h": 27600,
            "three_rect_v": 27600,
            "four_rect": 20736,
        }

    def test_side_1_has_no_features(self):
        assert enumerate_features(1) == []

    @pytest.mark.parametrize("side", [2, 3, 4, 6])
    def test_matches_exhaustive_placement_oracle(self, side):
        feats = enumerate_features(side)
        by_kind = {}
        for f in feats:
            by_kind[f.kind] = by_kind.get(f.kind, 0) + 1
            assert f.base.inside(side, side)
        oracle = exhaustive_placements(side)
        assert by_kind == {k: v for k, v in oracle.items() if v}

    def test_no_duplicates(self):
        feats = enumerate_features(6)
        assert len(set(feats)) == len(feats)


class TestEvalFeature:
    def test_constant_window_gives_zero(self):
        ii = integral_image(norm_img(np.full((24, 24), 0.7)))
        rng = np.random.default_rng(0)
        feats = enumerate_features(24)
        for idx in rng.integers(0, len(feats), 100):
            assert eval_feature(ii, feats[idx]) == pytest.approx(0.0, abs=1e-9)

    def test_two_rect_h_sign_convention(self):
        # left half white (-1s), right half black (+1s): value = -area
        data = np.hstack([np.full((24, 12), -1.0), np.full((24, 12), 1.0)])
        ii = integral_image(norm_img(data))
        f = HaarFeature("two_rect_h", Rect(0, 0, 24, 24))
        assert eval_feature(ii, f) == pytest.approx(-(24 * 24))
        flipped = integral_image(norm_img(-data))
        assert eval_feature(flipped, f) == pytest.approx(24 * 24)

    def test_matches_direct_pixel_summation(self):
        rng = np.random.default_rng(1)
        feats = enumerate_features(24)
        win = rng.normal(size=(24, 24))
        ii = integral_image(norm_img(win))
        for idx in rng.integers(0, len(feats), 1000):
            f = feats[idx]
            direct = sum(
                wt * win[r.y : r.y + r.h, r.x : r.x + r.w].sum()
                for r, wt in f.sub_rects()
            )
            assert abs(eval_feature(ii, f) - direct) <= 1e-9

    def test_out_of_window_feature(self):
        ii = integral_image(norm_img(np.zeros((8, 8))))
        with pytest.raises(ValueError):
            eval_feature(ii, HaarFeature("two_rect_h", Rect(4, 0, 6, 2)))


# Hand-run boosting oracle on 2x2 windows. Feature order for side 2:
#   0 two_rect_h (0,0,2,1): a00-a01       4 two_rect_v (1,0,1,2): a01-a11
#   1 two_rect_h (0,1,2,1): a10-a11       5 two_rect_v (0,0,2,2): row0-row1
#   2 two_rect_h (0,0,2,2): col0-col1     6 four_rect  (0,0,2,2): a00+a11-a01-a10
#   3 two_rect_v (0,0,1,2): a00-a10
HAND_SAMPLES = [
    ([[2, 0], [1, 0]], 1),
    ([[1, 1], [0, 0]], 1),
    ([[1, 2], [0, 1]], -1),
    ([[1, 0], [2, 2]], -1),
]


class TestAdaBoost:
    def test_hand_computed_two_rounds(self):
        # feature values (s1..s4):
        #   F0: 2  0 -1  1    F1: 1  0 -1  0    F2: 3  1 -2  1   F3: 1  1  1 -1
        #   F4: 0  1  1 -2    F5: 1  2  2 -3    F6: 1  0  0  1
        # round 1, uniform weights 1/4: every feature's best weighted error
        # is 1/4 except F6 (1/2); tie -> feature 0. Inside F0 the first
        # minimum in scan order is threshold position 1, polarity -1:
        # theta = (-1+0)/2, predicts face iff value > -0.5, errs on s4.
        samples = [norm_img(d) for d, _ in HAND_SAMPLES]
        labels = [y for _, y in HAND_SAMPLES]
        learners = train_adaboost(samples, labels, rounds=2, window_side=2)

        first = learners[0]
        assert first.feature == HaarFeature("two_rect_h", Rect(0, 0, 2, 1))
        assert first.polarity == -1
        assert first.threshold == pytest.approx(-0.5, abs=1e-12)
        assert first.alpha == pytest.approx(0.5 * math.log(3.0), abs=1e-9)

        # weights become (1/6, 1/6, 1/6, 1/2); best error is now 1/6,
        # again tied from F0 up, and F0's first minimum sits at position 3:
        # theta = (1+2)/2, polarity -1, alpha = 0.5*ln(5)
        second = learners[1]
        assert second.feature == HaarFeature("two_rect_h", Rect(0, 0, 2, 1))
        assert second.polarity == -1
        assert second.threshold == pytest.approx(1.5, abs=1e-12)
        assert second.alpha == pytest.approx(0.5 * math.log(5.0), abs=1e-9)

    def test_perfect_split_single_round(self):
        samples = [norm_img([[1, 0], [0, 0]]), norm_img([[0, 1], [0, 0]])]
        learners = train_adaboost(samples, [1, -1], rounds=1, window_side=2)
        lr = learners[0]
        assert lr.feature == HaarFeature("two_rect_h", Rect(0, 0, 2, 1))
        assert lr.polarity == -1
        assert lr.threshold == pytest.approx(0.0, abs=1e-12)
        # eps clamped to 1e-10 before alpha
        assert lr.alpha == pytest.approx(0.5 * math.log((1 - 1e-10) / 1e-10), abs=1e-9)
        # 100% training accuracy in one round
        for win, y in zip(samples, [1, -1]):
            assert ensemble_predict(learners, win) == y

    def test_single_class_rejected(self):
        samples = [norm_img([[1, 0], [0, 0]])] * 3
        with pytest.raises(TrainingError):
            train_adaboost(samples, [1, 1, 1], rounds=1, window_side=2)

    def test_selected_errors_below_half_and_weights_renormalized(self):
        rng = np.random.default_rng(2)
        side = 8
        samples, labels = [], []
        for _ in range(60):
            a = rng.normal(0, 1, (side, side))
            a[2:6, 2:6] += 1.5
            samples.append(norm_img(a))
            labels.append(1)
        for _ in range(60):
            samples.append(norm_img(rng.normal(0, 1, (side, side))))
            labels.append(-1)
        learners = train_adaboost(samples, labels, rounds=8)
        assert len(learners) == 8
        assert all(lr.alpha > 0 for lr in learners)  # alpha > 0 iff eps < 0.5

    def test_training_error_non_increasing(self):
        rng = np.random.default_rng(3)
        side = 8
        samples, labels = [], []
        for _ in range(50):
            a = rng.normal(0, 0.9, (side, side))
            a[2:6, 2:6] += 1.1
            samples.append(norm_img(a))
            labels.append(1)
        for _ in range(50):
            samples.append(norm_img(rng.normal(0, 1, (side, side))))
            labels.append(-1)
        learners = train_adaboost(samples, labels, rounds=10)
        iis = [integral_image(s) for s in samples]
        errors = []
        for t in range(1, 11):
            wrong = 0
            for ii, y in zip(iis, labels):
                vote = sum(lr.alpha * lr.predict(ii) for lr in learners[:t])
                wrong += (1 if vote >= 0 else -1) != y
            errors.append(wrong)
        assert all(b <= a for a, b in zip(errors, errors[1:]))


class TestCascade:
    def build_two_stage(self):
        # stump: face iff top-left pixel (relative to window mean) is high
        f = HaarFeature("two_rect_v", Rect(0, 0, 2, 2))  # row0 - row1
        lr1 = WeakClassifier(f, 0.0, -1, 1.0)   # face iff value > 0
        lr2 = WeakClassifier(f, -1.0, -1, 2.0)  # face iff value > -1
        return Cascade(2, (CascadeStage((lr1,), 0.5), CascadeStage((lr2,), 1.0)))

    def test_short_circuit_equals_full_evaluation(self):
        cascade = self.build_two_stage()
        rng = np.random.default_rng(4)
        for _ in range(100):
            win = norm_img(rng.normal(size=(2, 2)))
            ii = integral_image(win)
            full = all(stage.accepts(ii) for stage in cascade.stages)
            assert cascade.accepts(ii) == full

    def test_rejection_at_first_stage_vetoes(self):
        cascade = self.build_two_stage()
        win = norm_img([[-1.0, -1.0], [1.0, 1.0]])  # row0-row1 = -4
        ii = integral_image(win)
        assert not cascade.stages[0].accepts(ii)
        assert not cascade.accepts(ii)

    def test_train_cascade_filters_and_accepts_faces(self):
        rng = np.random.default_rng(5)
        side = 8
        faces, nonfaces = [], []
        for _ in range(40):
            a = rng.normal(0, 0.5, (side, side))
            a[2:6, 2:6] += 2.0
            faces.append(norm_img(a))
            nonfaces.append(norm_img(rng.normal(0, 1, (side, side))))
        cascade = train_cascade(
            faces + nonfaces, [1] * 40 + [-1] * 40, stage_sizes=(3, 6), window_side=side
        )
        hit = sum(cascade.accepts(integral_image(w)) for w in faces)
        false = sum(cascade.accepts(integral_image(w)) for w in nonfaces)
        assert hit >= 36
        assert false <= 4


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(6)
        side = 8
        samples = [norm_img(rng.normal(size=(side, side))) for _ in range(20)]
        labels = [1] * 10 + [-1] * 10
        cascade = train_cascade(samples, labels, stage_sizes=(4,), window_side=side)
        text = cascade_to_json(cascade)
        assert cascade_from_json(text) == cascade

    def test_field_order_and_17_digits(self):
        lr = WeakClassifier(HaarFeature("four_rect", Rect(1, 2, 4, 6)), 0.1, 1, 0.2)
        cascade = Cascade(24, (CascadeStage((lr,), 0.1),))
        text = cascade_to_json(cascade)
        assert text.startswith('{"version": 1, "window_side": 24, "stages": ')
        assert '"kind": "four_rect", "x": 1, "y": 2, "w": 4, "h": 6' in text
        # 0.1 rendered with 17 significant digits
        assert "0.10000000000000001" in text

    def test_version_check(self):
        with pytest.raises(ValueError, match="version"):
            cascade_from_json('{"version": 99, "window_side": 24, "stages": []}')

    def test_file_round_trip(self, tmp_path):
        lr = WeakClassifier(HaarFeature("two_rect_h", Rect(0, 0, 2, 1)), -0.5, -1, 0.7)
        cascade = Cascade(2, (CascadeStage((lr,), 0.35),))
        path = tmp_path / "cascade.json"
        detector.save_cascade(cascade, path)
        assert detector.load_cascade(path) == cascade


@pytest.fixture(scope="module")
def face_cascade():
    rng = np.random.default_rng(7)
    side = 16
    faces = [
        imaging.extract_window(img, imaging.full_rect(img), side)
        for img in (synth.synth_face(i, v) for i in range(8) for v in range(3))
    ]
    nonfaces = [
        imaging.normalize(GrayImage(rng.uniform(0, 255, (side, side)), RAW8))
        for _ in range(30)
    ]
    return train_cascade(
        faces + nonfaces, [1] * len(faces) + [-1] * len(nonfaces),
        stage_sizes=(5, 8), window_side=side,
    )


class TestDetectFaces:

    def test_too_small_image_returns_empty(self, face_cascade):
        img = GrayImage(np.full((10, 10), 50, dtype=np.uint8))
        assert detect_faces(img, face_cascade) == []

    def test_uniform_image_has_no_detections(self, face_cascade):
        img = GrayImage(np.full((48, 48), 120, dtype=np.uint8))
        assert detect_faces(img, face_cascade) == []

    def test_self_detection_on_training_face(self, face_cascade):
        scene = np.full((64, 64), 35, dtype=np.uint8)
        face = synth.synth_face(2, 0, side=24)
        scene[18:42, 20:44] = face.pixels
        truth = Rect(20, 18, 24, 24)
        dets = detect_faces(GrayImage(scene), face_cascade)
        assert dets
        assert any(d.box.iou(truth) >= 0.5 for d in dets)

    def test_output_order_and_merging(self, face_cascade):
        scene = np.full((64, 64), 35, dtype=np.uint8)
        face = synth.synth_face(1, 0, side=24)
        scene[18:42, 20:44] = face.pixels
        dets = detect_faces(GrayImage(scene), face_cascade)
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)
        for i, a in enumerate(dets):
            for b in dets[i + 1 :]:
                assert a.box.iou(b.box) <= 0.3
