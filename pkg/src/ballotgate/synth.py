"""Deterministic synthetic biometric imagery.

Real enrollment corpora cannot ship with the repository, so the
evaluation harness, demos and tests draw on seeded generators instead:

* faces: elliptical head with identity-specific eye/mouth geometry, per
  image illumination gradients, noise and small shifts;
* fingerprints: curved sinusoidal ridge fields with erase patches
  (ridge endings) and bridge bars (bifurcations); impressions of one
  finger differ by small whole-pattern translations.

Same seeds in, same images out, on any platform.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .imaging import GrayImage, write_pgm

_FACE_TAG = 0xFACE
_FACE_VARIANT_TAG = 0xFAD
_FP_TAG = 0xF1A
_FP_IMPRESSION_TAG = 0xF1B


def identity_label(i: int) -> str:
    return f"id{i:02d}"


# -- faces ---------------------------------------------------------------------

def synth_face(identity: int, variant: int = 0, side: int = 64) -> GrayImage:
    """Render one face image for ``identity``; ``variant`` perturbs
    illumination, noise and position but not the facial geometry."""
    rng = np.random.default_rng([identity, _FACE_TAG])
    skin = rng.uniform(165, 225)
    background = rng.uniform(25, 65)
    rx = rng.uniform(0.26, 0.40) * side
    ry = rng.uniform(0.34, 0.48) * side
    eye_dx = rng.uniform(0.10, 0.24) * side
    eye_dy = rng.uniform(0.06, 0.20) * side
    eye_r = rng.uniform(0.035, 0.085) * side
    eye_level = rng.uniform(10, 80)
    brow_dy = eye_dy + rng.uniform(0.06, 0.12) * side
    brow_hh = rng.uniform(0.010, 0.025) * side
    brow_level = rng.uniform(30, 90)
    mouth_dy = rng.uniform(0.12, 0.30) * side
    mouth_hw = rng.uniform(0.08, 0.20) * side
    mouth_hh = rng.uniform(0.015, 0.040) * side
    mouth_level = rng.uniform(20, 90)
    nose_len = rng.uniform(0.06, 0.20) * side
    nose_hw = rng.uniform(0.5, 2.0)

    vrng = np.random.default_rng([identity, variant, _FACE_VARIANT_TAG])
    grad_x = vrng.uniform(-6, 6) / side
    grad_y = vrng.uniform(-6, 6) / side
    noise_sigma = vrng.uniform(1.0, 2.5)
    gain = vrng.uniform(0.92, 1.08)    # removed by per-window normalization,
    offset = vrng.uniform(-10, 10)     # varies the raw files visibly

    cx = side / 2.0
    cy = side / 2.0
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    canvas = np.full((side, side), background)

    head = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    canvas[head] = skin
    for sx in (-1.0, 1.0):
        ex = cx + sx * eye_dx
        eye = ((xx - ex) ** 2 + (yy - (cy - eye_dy)) ** 2) <= eye_r ** 2
        canvas[eye] = eye_level
        brow = (np.abs(xx - ex) <= 1.6 * eye_r) & (np.abs(yy - (cy - brow_dy)) <= brow_hh)
        canvas[brow] = brow_level
    mouth = (np.abs(xx - cx) <= mouth_hw) & (np.abs(yy - (cy + mouth_dy)) <= mouth_hh)
    canvas[mouth] = mouth_level
    nose = (np.abs(xx - cx) <= nose_hw) & (np.abs(yy - cy) <= nose_len / 2)
    canvas[nose] = skin - 45.0

    canvas += grad_x * (xx - cx) + grad_y * (yy - cy)
    canvas += vrng.normal(0.0, noise_sigma, canvas.shape)
    canvas = gain * canvas + offset
    return GrayImage(np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8))


def synth_face_gallery(
    n_identities: int = 10, images_each: int = 10, side: int = 64
) -> dict[str, list[GrayImage]]:
    return {
        identity_label(i): [synth_face(i, v, side) for v in range(images_each)]
        for i in range(n_identities)
    }


def synth_face_pool(n_identities: int = 30, start: int = 100, side: int = 64) -> list[GrayImage]:
    """Training pool for fitting the eigen model: one image per identity,
    identities disjoint from the ``synth_face_gallery`` range.

    A single variant per identity keeps within-identity noise directions
    out of the fitted basis, which is what makes enrolled-vs-new-photo
    similarities high and impostor similarities low.
    """
    return [synth_face(start + i, 0, side) for i in range(n_identities)]


# -- fingerprints ----------------------------------------------------------------

def synth_fingerprint(identity: int, impression: int = 0, size: int = 160) -> GrayImage:
    """Render one fingerprint impression.

    The ridge field, erase patches and bridges are fixed by the identity
    seed. Impressions translate the whole pattern (margin included) by a
    multiple of the 16-pixel binarization block, so every pipeline stage
    sees the same local neighborhoods and the extracted constellation
    translates rigidly; the matcher's tolerance to sub-block offsets is
    exercised by template-level tests instead.
    """
    rng = np.random.default_rng([identity, _FP_TAG])
    theta = rng.uniform(0.0, np.pi)
    wavelength = rng.uniform(9.0, 13.0)
    k1 = rng.uniform(0.4, 1.2)
    k2 = rng.uniform(0.4, 1.2)
    c1 = rng.uniform(0.0, 2 * np.pi)
    c2 = rng.uniform(0.0, 2 * np.pi)
    margin = 24
    inner_lo, inner_hi = margin + 14, size - margin - 14

    def scatter(count: int, min_gap: float) -> list[tuple[float, float]]:
        pts: list[tuple[float, float]] = []
        while len(pts) < count:
            px, py = rng.uniform(inner_lo, inner_hi, 2)
            if all((px - qx) ** 2 + (py - qy) ** 2 >= min_gap ** 2 for qx, qy in pts):
                pts.append((px, py))
        return pts

    spots = scatter(int(rng.integers(7, 11)), 2.2 * wavelength)
    patches = [(px, py, rng.uniform(3.2, 4.5)) for px, py in spots[: len(spots) // 2]]
    bridges = spots[len(spots) // 2 :]

    irng = np.random.default_rng([identity, impression, _FP_IMPRESSION_TAG])
    if impression == 0:
        dx = dy = 0
    else:
        dx = int(irng.choice((-16, 0, 16)))
        dy = int(irng.choice((-16, 0, 16)))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = xx - dx
    v = yy - dy
    phase = (
        2 * np.pi * (u * np.cos(theta) + v * np.sin(theta)) / wavelength
        + k1 * np.sin(2 * np.pi * u / 90.0 + c1)
        + k2 * np.sin(2 * np.pi * v / 75.0 + c2)
    )
    # steep ridge flanks: the ridge/valley boundary barely moves when the
    # binarization threshold wobbles with the local block statistics
    canvas = 127.5 + 110.0 * np.tanh(3.0 * np.sin(phase))

    for px, py, pr in patches:
        disk = (xx - (px + dx)) ** 2 + (yy - (py + dy)) ** 2 <= pr ** 2
        canvas[disk] = 235.0
    across = theta + np.pi / 2.0
    for bx, by in bridges:
        half = 0.7 * wavelength
        ts = np.linspace(-half, half, int(6 * half))
        for t in ts:
            lx = bx + dx + t * np.cos(across)
            ly = by + dy + t * np.sin(across)
            bar = (xx - lx) ** 2 + (yy - ly) ** 2 <= 1.2 ** 2
            canvas[bar] = 20.0

    # margin cut in pattern coordinates: ridge truncation points translate
    # rigidly with the pattern, so impressions stay alignable end to end
    outside = (u < margin) | (u >= size - margin) | (v < margin) | (v >= size - margin)
    canvas[outside] = 225.0
    return GrayImage(np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8))


def synth_fingerprint_gallery(
    n_identities: int = 10, impressions_each: int = 4, size: int = 160
) -> dict[str, list[GrayImage]]:
    return {
        identity_label(i): [synth_fingerprint(i, v, size) for v in range(impressions_each)]
        for i in range(n_identities)
    }


# -- dataset directories ---------------------------------------------------------

def write_dataset(
    root, images: dict[str, list[GrayImage]], enroll_per_identity: int
) -> Path:
    """Write a dataset tree (one sub-directory per identity, PGM images)
    plus the enrollment/probe split file used by the evaluation harness."""
    root = Path(root)
    split = {"enroll": {}, "probe": {}}
    for identity, imgs in images.items():
        idir = root / identity
        idir.mkdir(parents=True, exist_ok=True)
        enroll, probe = [], []
        for i, img in enumerate(imgs):
            name = f"{i:02d}.pgm"
            write_pgm(img, idir / name)
            (enroll if i < enroll_per_identity else probe).append(name)
        split["enroll"][identity] = enroll
        split["probe"][identity] = probe
    (root / "split.json").write_text(json.dumps(split, indent=1))
    return root
