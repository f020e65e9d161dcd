"""Accuracy evaluation harness.

Datasets are directories with one sub-directory per identity (PGM/PNG
images) and an optional ``split.json`` naming the enrollment and probe
files per identity; without it the first half of each identity's images
(sorted) enrolls and the rest probe.

Reports count each probe exactly once: ``correct`` when accepted with
the true identity, ``incorrect`` when accepted with a wrong identity,
``missed`` when rejected (below threshold, or no face found).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import facerec, fingerprint
from .config import ApiConfig
from .imaging import GrayImage, extract_window, full_rect, read_image

log = logging.getLogger(__name__)

FACE_COLUMNS = ("Faces tested", "Correct", "Incorrect", "Missed", "Accuracy")
FINGERPRINT_COLUMNS = ("Tested", "Correct", "Incorrect", "Missed", "Accuracy")


@dataclass(frozen=True)
class EvalReport:
    tested: int
    correct: int
    incorrect: int
    missed: int

    def __post_init__(self):
        if self.tested != self.correct + self.incorrect + self.missed:
            raise ValueError("tested must equal correct + incorrect + missed")

    @property
    def accuracy(self) -> float:
        """Percent of probes accepted with the true identity."""
        if self.tested == 0:
            return 0.0
        return 100.0 * self.correct / self.tested

    def row(self) -> tuple:
        return (self.tested, self.correct, self.incorrect, self.missed, f"{self.accuracy:g}%")


def format_report(report: EvalReport, columns=FACE_COLUMNS) -> str:
    """Render the report in the fixed five-column schema."""
    cells = [str(v) for v in report.row()]
    widths = [max(len(h), len(c)) for h, c in zip(columns, cells)]
    head = "  ".join(h.ljust(w) for h, w in zip(columns, widths))
    body = "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    return head + "\n" + body


# -- dataset loading -----------------------------------------------------------

def load_split_dataset(dataset_dir) -> tuple[dict, dict]:
    """Return ({identity: [enroll images]}, {identity: [probe images]})."""
    root = Path(dataset_dir)
    identities = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not identities:
        raise ValueError(f"no identity sub-directories under {root}")
    split_file = root / "split.json"
    if split_file.exists():
        split = json.loads(split_file.read_text())
        enroll_names = split["enroll"]
        probe_names = split["probe"]
    else:
        enroll_names, probe_names = {}, {}
        for ident in identities:
            names = sorted(
                p.name for p in (root / ident).iterdir() if p.suffix in (".pgm", ".png")
            )
            half = (len(names) + 1) // 2
            enroll_names[ident] = names[:half]
            probe_names[ident] = names[half:]
    enroll = {
        ident: [read_image(root / ident / n) for n in names]
        for ident, names in enroll_names.items()
    }
    probe = {
        ident: [read_image(root / ident / n) for n in names]
        for ident, names in probe_names.items()
    }
    return enroll, probe


def load_all_images(dataset_dir) -> dict[str, list[GrayImage]]:
    root = Path(dataset_dir)
    out = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        names = sorted(p for p in sub.iterdir() if p.suffix in (".pgm", ".png"))
        if names:
            out[sub.name] = [read_image(p) for p in names]
    if not out:
        raise ValueError(f"no identity sub-directories under {root}")
    return out


# -- face evaluation ------------------------------------------------------------

def _face_vector(img: GrayImage, side: int):
    return extract_window(img, full_rect(img), side).pixels.ravel()


def _fit_face_stage(enroll: dict, config: ApiConfig):
    side = config.crop_side
    vectors = [(ident, _face_vector(img, side)) for ident, imgs in enroll.items() for img in imgs]
    if len(vectors) < 2:
        raise ValueError("need at least 2 enrollment images")
    model = facerec.fit_eigenmodel([v for _, v in vectors], m=config.m)
    gallery = [facerec.FaceTemplate(ident, facerec.project(model, v)) for ident, v in vectors]
    subspaces = facerec.fit_identity_subspaces(gallery, config.q_max)
    return model, gallery, {s.identity: s for s in subspaces}


def eval_face(dataset_dir, config: ApiConfig | None = None) -> EvalReport:
    """Enroll the gallery split, verify every probe, tabulate the outcome."""
    config = config or ApiConfig()
    enroll, probes = load_split_dataset(dataset_dir)
    model, gallery, subspaces = _fit_face_stage(enroll, config)
    side = config.crop_side
    correct = incorrect = missed = 0
    for ident, imgs in probes.items():
        for img in imgs:
            result = facerec.cascaded_verify(
                model,
                subspaces,
                gallery,
                _face_vector(img, side),
                threshold=config.face_threshold,
                k=config.k,
            )
            if not result.accepted:
                missed += 1
            elif result.candidate == ident:
                correct += 1
            else:
                incorrect += 1
    return EvalReport(correct + incorrect + missed, correct, incorrect, missed)


# -- fingerprint evaluation ------------------------------------------------------

def eval_fingerprint(dataset_dir, config: ApiConfig | None = None) -> EvalReport:
    """Identification over the enrolled templates: the best-matching
    template's identity wins when its similarity reaches the threshold."""
    config = config or ApiConfig()
    enroll, probes = load_split_dataset(dataset_dir)
    templates = [
        (ident, fingerprint.extract_template(img))
        for ident, imgs in enroll.items()
        for img in imgs
    ]
    if not templates:
        raise ValueError("no enrollment fingerprints")
    correct = incorrect = missed = 0
    for ident, imgs in probes.items():
        for img in imgs:
            probe_t = fingerprint.extract_template(img)
            best_sim, best_ident = -1.0, None
            for gal_ident, gal_t in templates:
                sim = fingerprint.match_templates(
                    probe_t, gal_t, r_tol=config.r_tol, theta_tol=config.theta_tol
                ).similarity
                if sim > best_sim:
                    best_sim, best_ident = sim, gal_ident
            if best_sim < config.fp_threshold:
                missed += 1
            elif best_ident == ident:
                correct += 1
            else:
                incorrect += 1
    return EvalReport(correct + incorrect + missed, correct, incorrect, missed)


# -- classifier comparison --------------------------------------------------------

def compare_classifiers(
    dataset_dir, k_values, config: ApiConfig | None = None, folds: int = 5
) -> list[dict]:
    """Cross-validated accuracy of plain nearest-neighbor labeling vs the
    full two-stage verifier, per k. Rows: {k, knn_only, gpca_knn} with
    accuracies in percent; a k larger than a fold's gallery is skipped."""
    config = config or ApiConfig()
    images = load_all_images(dataset_dir)
    side = config.crop_side
    vectors = {
        ident: [_face_vector(img, side) for img in imgs] for ident, imgs in images.items()
    }
    rows = []
    for k in k_values:
        knn_correct = cascade_correct = tested = 0
        skipped = False
        for fold in range(folds):
            train, test = [], []
            for ident, vs in vectors.items():
                for i, v in enumerate(vs):
                    (test if i % folds == fold else train).append((ident, v))
            if not train or not test:
                continue
            if k > len(train):
                log.warning("k=%d exceeds fold gallery size %d; skipped", k, len(train))
                skipped = True
                break
            model = facerec.fit_eigenmodel([v for _, v in train], m=config.m)
            gallery = [
                facerec.FaceTemplate(ident, facerec.project(model, v)) for ident, v in train
            ]
            subspaces = {
                s.identity: s for s in facerec.fit_identity_subspaces(gallery, config.q_max)
            }
            for ident, v in test:
                coords = facerec.project(model, v)
                label, _ = facerec.knn_classify(gallery, coords, k)
                result = facerec.cascaded_verify(
                    model, subspaces, gallery, v, threshold=config.face_threshold, k=k
                )
                knn_correct += label == ident
                cascade_correct += result.accepted and result.candidate == ident
                tested += 1
        if skipped or tested == 0:
            continue
        rows.append(
            {
                "k": k,
                "knn_only": 100.0 * knn_correct / tested,
                "gpca_knn": 100.0 * cascade_correct / tested,
            }
        )
    return rows


def comparison_csv(rows: list[dict]) -> str:
    lines = ["k,knn_only,gpca_knn"]
    for row in rows:
        lines.append(f"{row['k']},{row['knn_only']:g},{row['gpca_knn']:g}")
    return "\n".join(lines) + "\n"
