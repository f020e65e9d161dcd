"""Verification response-time benchmark across face-vector dimensions.

For each requested dimension d (a perfect square; the crop is sqrt(d)
square) a synthetic gallery is enrolled at that dimension and the full
per-probe verification path (window extraction, projection, neighbor
search, subspace similarity) is timed. Each trial times a fixed probe
batch; the reported figure is the median across trials, which is the
robust choice under wall-clock noise even though the field keeps its
schema name ``mean_response_s``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import facerec, synth
from .imaging import extract_window, full_rect


@dataclass(frozen=True)
class TimingPoint:
    dimension: int
    mean_response_s: float
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def bench_response(
    dimensions,
    trials: int = 9,
    n_identities: int = 8,
    images_each: int = 3,
    probes_per_trial: int = 32,
    m: int = 20,
) -> list[TimingPoint]:
    """Median wall-clock seconds per verification at each dimension."""
    points = []
    for d in dimensions:
        side = math.isqrt(d)
        if side * side != d:
            raise ValueError(f"dimension {d} is not a perfect square")
        gallery_imgs = synth.synth_face_gallery(n_identities, images_each + 1)
        vec = lambda img: extract_window(img, full_rect(img), side).pixels.ravel()
        train = [
            (ident, vec(img))
            for ident, imgs in gallery_imgs.items()
            for img in imgs[:images_each]
        ]
        model = facerec.fit_eigenmodel([v for _, v in train], m=m)
        gallery = [facerec.FaceTemplate(i, facerec.project(model, v)) for i, v in train]
        subspaces = {
            s.identity: s for s in facerec.fit_identity_subspaces(gallery, q_max=3)
        }
        probe_imgs = [imgs[images_each] for imgs in gallery_imgs.values()]
        elapsed = []
        for _ in range(trials):
            start = time.perf_counter()
            for i in range(probes_per_trial):
                img = probe_imgs[i % len(probe_imgs)]
                facerec.cascaded_verify(model, subspaces, gallery, vec(img), k=1)
            elapsed.append((time.perf_counter() - start) / probes_per_trial)
        points.append(TimingPoint(d, float(np.median(elapsed)), trials))
    return points


def timing_csv(points: list[TimingPoint]) -> str:
    lines = ["dimension,mean_response_s,trials"]
    for p in points:
        lines.append(f"{p.dimension},{p.mean_response_s:.9f},{p.trials}")
    return "\n".join(lines) + "\n"
