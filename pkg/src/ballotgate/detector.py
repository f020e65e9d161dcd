"""Face detection with rectangular Haar features.

A detection window (24x24 by default) is described by the full set of
rectangular Haar features: five kinds, every position and scale that
fits. Feature values come from integral-image rectangle sums, weak
classifiers are decision stumps fitted by AdaBoost, and stumps are
grouped into cascade stages that reject windows early.

Feature value convention: white rectangle sums minus black rectangle
sums, with the middle rectangle of three-rect kinds weighted twice so
every kind responds 0 on a flat patch.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from . import jsonio
from .imaging import (
    GrayImage,
    IntegralImage,
    Rect,
    crop,
    integral_image,
    normalize,
    rect_sum,
    resize,
)

log = logging.getLogger(__name__)

KINDS = ("two_rect_h", "two_rect_v", "three_rect_h", "three_rect_v", "four_rect")

# composite grid (columns, rows) of each kind
_GRID = {
    "two_rect_h": (2, 1),
    "two_rect_v": (1, 2),
    "three_rect_h": (3, 1),
    "three_rect_v": (1, 3),
    "four_rect": (2, 2),
}

CASCADE_FORMAT_VERSION = 1


class TrainingError(ValueError):
    """Raised when boosting cannot make progress on the given samples."""


class HaarFeature(NamedTuple):
    kind: str
    base: Rect  # full composite rectangle inside the window

    def sub_rects(self) -> list[tuple[Rect, int]]:
        """(rectangle, weight) pairs; positive weights are white."""
        x, y, w, h = self.base.x, self.base.y, self.base.w, self.base.h
        if self.kind == "two_rect_h":
            half = w // 2
            return [(Rect(x, y, half, h), 1), (Rect(x + half, y, half, h), -1)]
        if self.kind == "two_rect_v":
            half = h // 2
            return [(Rect(x, y, w, half), 1), (Rect(x, y + half, w, half), -1)]
        if self.kind == "three_rect_h":
            third = w // 3
            return [
                (Rect(x, y, third, h), 1),
                (Rect(x + third, y, third, h), -2),
                (Rect(x + 2 * third, y, third, h), 1),
            ]
        if self.kind == "three_rect_v":
            third = h // 3
            return [
                (Rect(x, y, w, third), 1),
                (Rect(x, y + third, w, third), -2),
                (Rect(x, y + 2 * third, w, third), 1),
            ]
        if self.kind == "four_rect":
            hw, hh = w // 2, h // 2
            return [
                (Rect(x, y, hw, hh), 1),
                (Rect(x + hw, y, hw, hh), -1),
                (Rect(x, y + hh, hw, hh), -1),
                (Rect(x + hw, y + hh, hw, hh), 1),
            ]
        raise ValueError(f"unknown feature kind {self.kind!r}")


def enumerate_features(window_side: int = 24) -> list[HaarFeature]:
    """All placements and scales of the five kinds inside a square window.

    Deterministic order: kind, then width, height, y, x. For the default
    24-pixel window the total is 162,336.
    """
    if window_side < 1:
        raise ValueError("window_side must be >= 1")
    feats: list[HaarFeature] = []
    append = feats.append
    for kind in KINDS:
        cols, rows = _GRID[kind]
        for w in range(cols, window_side + 1, cols):
            for h in range(rows, window_side + 1, rows):
                for y in range(window_side - h + 1):
                    for x in range(window_side - w + 1):
                        append(HaarFeature(kind, Rect(x, y, w, h)))
    return feats


def eval_feature(ii: IntegralImage, f: HaarFeature) -> float:
    """White-minus-black rectangle sums over one window's integral image."""
    if not f.base.inside(ii.width, ii.height):
        raise ValueError(f"feature rectangle {f.base} outside {ii.width}x{ii.height} window")
    return float(sum(weight * rect_sum(ii, r) for r, weight in f.sub_rects()))


@dataclass(frozen=True)
class WeakClassifier:
    """Decision stump: predicts face (+1) iff polarity*value < polarity*threshold."""

    feature: HaarFeature
    threshold: float
    polarity: int
    alpha: float

    def predict(self, ii: IntegralImage) -> int:
        value = eval_feature(ii, self.feature)
        return 1 if self.polarity * value < self.polarity * self.threshold else -1


@dataclass(frozen=True)
class CascadeStage:
    learners: tuple[WeakClassifier, ...]
    threshold: float

    def vote(self, ii: IntegralImage) -> float:
        """Sum of alphas of learners voting face."""
        return sum(lr.alpha for lr in self.learners if lr.predict(ii) == 1)

    def accepts(self, ii: IntegralImage) -> bool:
        return self.vote(ii) >= self.threshold


@dataclass(frozen=True)
class Cascade:
    window_side: int
    stages: tuple[CascadeStage, ...]

    def accepts(self, ii: IntegralImage) -> bool:
        """Short-circuit: the first rejecting stage vetoes the window."""
        return all(stage.accepts(ii) for stage in self.stages)

    def score(self, ii: IntegralImage) -> float:
        """Accumulated stage margins (only meaningful for accepted windows)."""
        return sum(stage.vote(ii) - stage.threshold for stage in self.stages)


@dataclass(frozen=True)
class Detection:
    box: Rect
    score: float


# -- training -----------------------------------------------------------------

def _padded_integrals(windows: list[GrayImage], side: int) -> np.ndarray:
    """Stack each window's padded integral table, flattened: (n, (side+1)^2)."""
    out = np.empty((len(windows), (side + 1) * (side + 1)), dtype=np.float64)
    for i, win in enumerate(windows):
        if win.pixels.shape != (side, side):
            raise ValueError(f"sample {i} is {win.pixels.shape}, expected {(side, side)}")
        out[i] = integral_image(win).padded.astype(np.float64).ravel()
    return out


def _eval_matrix(features: list[HaarFeature], side: int) -> sparse.csr_matrix:
    """Sparse map from a flattened padded integral table to all feature values.

    Each sub-rectangle contributes its 4 corner lookups; duplicate corners
    accumulate, so the matrix has ~10 entries per feature.
    """
    stride = side + 1
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for fi, feat in enumerate(features):
        for r, weight in feat.sub_rects():
            x0, y0, x1, y1 = r.x, r.y, r.x + r.w, r.y + r.h
            for yy, xx, sign in ((y1, x1, 1), (y0, x0, 1), (y0, x1, -1), (y1, x0, -1)):
                rows.append(fi)
                cols.append(yy * stride + xx)
                vals.append(float(sign * weight))
    shape = (len(features), stride * stride)
    return sparse.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def feature_values(
    windows: list[GrayImage], features: list[HaarFeature], window_side: int
) -> np.ndarray:
    """Evaluate every feature on every window: (n_features, n_windows)."""
    integrals = _padded_integrals(windows, window_side)
    return _eval_matrix(features, window_side) @ integrals.T


def _best_stump_for_chunk(
    order: np.ndarray,
    y_sorted_pos: np.ndarray,
    valid: np.ndarray,
    weights: np.ndarray,
):
    """Optimal (error, position, polarity) per feature row, vectorized.

    Threshold candidate k sits just below the k-th sorted value (k = 0..n,
    the open ends included); positions falling between equal values are
    pre-masked in ``valid``. Scan order on ties: position, then polarity
    +1 before -1.
    """
    rows = order.shape[0]
    w_sorted = weights[order]
    wp = np.where(y_sorted_pos, w_sorted, 0.0)
    wn = w_sorted - wp
    cp = np.concatenate([np.zeros((rows, 1)), np.cumsum(wp, axis=1)], axis=1)
    cn = np.concatenate([np.zeros((rows, 1)), np.cumsum(wn, axis=1)], axis=1)
    err_pos = cn + (cp[:, -1:] - cp)       # polarity +1: face iff value < theta
    err_neg = cp + (cn[:, -1:] - cn)       # polarity -1: face iff value > theta
    err_pos = np.where(valid, err_pos, np.inf)
    err_neg = np.where(valid, err_neg, np.inf)
    both = np.stack([err_pos, err_neg], axis=2).reshape(rows, -1)
    flat_idx = np.argmin(both, axis=1)
    best_err = both[np.arange(rows), flat_idx]
    return best_err, flat_idx // 2, np.where(flat_idx % 2 == 0, 1, -1)


def _threshold_at(v_sorted_row: np.ndarray, position: int) -> float:
    n = v_sorted_row.shape[0]
    if position == 0:
        return float(v_sorted_row[0] - 1.0)
    if position == n:
        return float(v_sorted_row[-1] + 1.0)
    return float(0.5 * (v_sorted_row[position - 1] + v_sorted_row[position]))


def train_adaboost(
    samples: list[GrayImage],
    labels,
    rounds: int,
    window_side: int | None = None,
    features: list[HaarFeature] | None = None,
    chunk: int = 8192,
) -> list[WeakClassifier]:
    """Boost decision stumps over the Haar feature set.

    ``labels`` holds +1 for faces and -1 for background. Each round picks
    the feature/threshold/polarity with the lowest weighted error (ties:
    lowest feature index, then lowest threshold position, polarity +1
    first), weights the stump by alpha = 0.5*ln((1-eps)/eps), and
    re-normalizes sample weights. A perfectly separating stump has its
    error clamped to 1e-10 and is logged.
    """
    y = np.asarray(labels, dtype=np.int64)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if len(samples) != y.shape[0]:
        raise ValueError("labels length does not match samples")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise TrainingError("training needs both face and non-face samples")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 or -1")
    side = window_side or samples[0].pixels.shape[0]
    if features is None:
        features = enumerate_features(side)
    if not features:
        raise TrainingError(f"no Haar features fit a {side}x{side} window")

    values = feature_values(samples, features, side)       # (F, n)
    order = np.argsort(values, axis=1, kind="stable").astype(np.int32)
    y_sorted_pos = (y == 1)[order]
    n = len(samples)
    # validity of each threshold position (equal neighboring sorted values
    # admit no threshold between them); fixed across rounds
    valid = np.ones((values.shape[0], n + 1), dtype=bool)
    v_sorted = np.take_along_axis(values, order, axis=1)
    valid[:, 1:n] = v_sorted[:, :-1] < v_sorted[:, 1:]
    del v_sorted

    weights = np.full(n, 1.0 / n)
    chosen: list[WeakClassifier] = []
    tie_eps = 1e-12  # cumsum round-off must not override the lowest-index tie rule
    for _ in range(rounds):
        best = None  # (err, feature_idx, position, polarity)
        for start in range(0, values.shape[0], chunk):
            sl = slice(start, min(start + chunk, values.shape[0]))
            err, pos, pol = _best_stump_for_chunk(
                order[sl], y_sorted_pos[sl], valid[sl], weights
            )
            local = int(np.nonzero(err <= err.min() + tie_eps)[0][0])
            if best is None or err[local] < best[0] - tie_eps:
                best = (float(err[local]), start + local, int(pos[local]), int(pol[local]))
        eps, feat_idx, position, polarity = best
        theta = _threshold_at(values[feat_idx][order[feat_idx]], position)
        if eps >= 0.5:
            raise TrainingError(f"no stump beats chance (best weighted error {eps:.3f})")
        if eps < 1e-10:
            log.info("round %d: perfect separation by feature %d", len(chosen) + 1, feat_idx)
            eps = 1e-10
        alpha = 0.5 * np.log((1.0 - eps) / eps)
        chosen.append(WeakClassifier(features[feat_idx], theta, polarity, float(alpha)))
        h = np.where(polarity * values[feat_idx] < polarity * theta, 1, -1)
        weights = weights * np.exp(-alpha * y * h)
        weights /= weights.sum()
    return chosen


def ensemble_predict(classifiers: list[WeakClassifier], window: GrayImage) -> int:
    """Sign of the alpha-weighted vote (+1 face on ties)."""
    ii = integral_image(window)
    vote = sum(lr.alpha * lr.predict(ii) for lr in classifiers)
    return 1 if vote >= 0 else -1


def train_cascade(
    samples: list[GrayImage],
    labels,
    stage_sizes=(10, 25),
    window_side: int | None = None,
    features: list[HaarFeature] | None = None,
) -> Cascade:
    """Train consecutive AdaBoost stages; each stage sees only the samples
    the earlier stages accepted. Stage threshold defaults to half the
    stage's total alpha. Stops early if a filtered class empties out.
    """
    side = window_side or samples[0].pixels.shape[0]
    y = np.asarray(labels, dtype=np.int64)
    active = list(range(len(samples)))
    stages: list[CascadeStage] = []
    for size in stage_sizes:
        ys = y[active]
        if not (np.any(ys == 1) and np.any(ys == -1)):
            log.info("stopping after %d stages: one class filtered out", len(stages))
            break
        learners = train_adaboost(
            [samples[i] for i in active], ys, size, window_side=side, features=features
        )
        threshold = 0.5 * sum(lr.alpha for lr in learners)
        stage = CascadeStage(tuple(learners), threshold)
        stages.append(stage)
        active = [i for i in active if stage.accepts(integral_image(samples[i]))]
        if not active:
            break
    if not stages:
        raise TrainingError("no stage could be trained")
    return Cascade(side, tuple(stages))


# -- detection ----------------------------------------------------------------

def detect_faces(
    img: GrayImage,
    cascade: Cascade,
    scale_step: float = 1.25,
    shift: int = 2,
) -> list[Detection]:
    """Slide the cascade window over every scale and position.

    Overlapping hits (IoU > 0.3) are merged keeping the highest score;
    output is sorted by score descending, then x, then y.
    """
    side = cascade.window_side
    hits: list[Detection] = []
    scale = 1.0
    while True:
        win = int(round(side * scale))
        if win > min(img.width, img.height):
            break
        step = max(1, int(round(shift * scale)))
        for y in range(0, img.height - win + 1, step):
            for x in range(0, img.width - win + 1, step):
                window = normalize(resize(crop(img, Rect(x, y, win, win)), side, side))
                ii = integral_image(window)
                if cascade.accepts(ii):
                    hits.append(Detection(Rect(x, y, win, win), cascade.score(ii)))
        scale *= scale_step
    hits.sort(key=lambda d: (-d.score, d.box.x, d.box.y))
    kept: list[Detection] = []
    for det in hits:
        if all(det.box.iou(k.box) <= 0.3 for k in kept):
            kept.append(det)
    return kept


# -- serialization ------------------------------------------------------------

def cascade_to_json(cascade: Cascade) -> str:
    doc = {
        "version": CASCADE_FORMAT_VERSION,
        "window_side": cascade.window_side,
        "stages": [
            {
                "threshold": stage.threshold,
                "learners": [
                    {
                        "kind": lr.feature.kind,
                        "x": lr.feature.base.x,
                        "y": lr.feature.base.y,
                        "w": lr.feature.base.w,
                        "h": lr.feature.base.h,
                        "threshold": lr.threshold,
                        "polarity": lr.polarity,
                        "alpha": lr.alpha,
                    }
                    for lr in stage.learners
                ],
            }
            for stage in cascade.stages
        ],
    }
    return jsonio.dumps(doc)


def cascade_from_json(text: str) -> Cascade:
    doc = json.loads(text)
    if doc.get("version") != CASCADE_FORMAT_VERSION:
        raise ValueError(f"unsupported cascade format version {doc.get('version')!r}")
    stages = tuple(
        CascadeStage(
            tuple(
                WeakClassifier(
                    HaarFeature(lr["kind"], Rect(lr["x"], lr["y"], lr["w"], lr["h"])),
                    float(lr["threshold"]),
                    int(lr["polarity"]),
                    float(lr["alpha"]),
                )
                for lr in stage["learners"]
            ),
            float(stage["threshold"]),
        )
        for stage in doc["stages"]
    )
    return Cascade(int(doc["window_side"]), stages)


def save_cascade(cascade: Cascade, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(cascade_to_json(cascade))


def load_cascade(path) -> Cascade:
    with open(path, "r", encoding="ascii") as fh:
        return cascade_from_json(fh.read())
