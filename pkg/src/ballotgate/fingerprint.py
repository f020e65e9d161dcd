"""Pattern-based fingerprint verification.

Pipeline: local-mean binarization, Zhang-Suen thinning to a one-pixel
skeleton, crossing-number minutiae extraction (ridge endings,
bifurcations, short ridges), then rigid alignment search over candidate
reference pairs with tolerance-based greedy pairing. Similarity is
2 * matched / (|a| + |b|), compared against the 0.90 acceptance rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import jsonio
from .imaging import RAW8, GrayImage

TEMPLATE_FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 0.90

ENDING = "ending"
BIFURCATION = "bifurcation"
SHORT_RIDGE = "short_ridge"
KINDS = (ENDING, BIFURCATION, SHORT_RIDGE)

BORDER_MARGIN = 5
_TRACE_STEPS = 5

# ring order around a pixel: N, NE, E, SE, S, SW, W, NW
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class BinaryImage:
    """Ridge mask: True pixels are ridge, False background."""

    ridge: np.ndarray

    def __post_init__(self):
        if self.ridge.ndim != 2 or self.ridge.dtype != bool:
            raise ValueError("ridge mask must be a 2-D bool array")
        arr = np.ascontiguousarray(self.ridge)
        arr.setflags(write=False)
        object.__setattr__(self, "ridge", arr)

    @property
    def width(self) -> int:
        return self.ridge.shape[1]

    @property
    def height(self) -> int:
        return self.ridge.shape[0]


@dataclass(frozen=True)
class Minutia:
    x: float
    y: float
    angle: float  # ridge direction, degrees in [0, 360)
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown minutia kind {self.kind!r}")
        object.__setattr__(self, "angle", float(self.angle) % 360.0)


@dataclass(frozen=True)
class FingerprintTemplate:
    minutiae: tuple
    width: int
    height: int

    def __post_init__(self):
        ordered = tuple(sorted(self.minutiae, key=lambda m: (m.y, m.x)))
        object.__setattr__(self, "minutiae", ordered)

    def __len__(self) -> int:
        return len(self.minutiae)


@dataclass(frozen=True)
class MatchResult:
    similarity: float
    matched_pairs: int
    transform: tuple  # (dx, dy, dtheta)

    @property
    def accepted(self) -> bool:
        return self.similarity >= DEFAULT_THRESHOLD


def binarize(img: GrayImage, block: int = 16, var_floor: float = 5.0) -> BinaryImage:
    """Mark dark pixels as ridge: pixel < mean of its block. Blocks with
    variance under ``var_floor`` carry no pattern and become background."""
    if img.tag != RAW8:
        raise ValueError("binarize expects a raw8 image")
    data = img.pixels.astype(np.float64)
    h, w = data.shape
    out = np.zeros((h, w), dtype=bool)
    for by in range(0, h, block):
        for bx in range(0, w, block):
            tile = data[by : by + block, bx : bx + block]
            if tile.var() < var_floor:
                continue
            out[by : by + block, bx : bx + block] = tile < tile.mean()
    return BinaryImage(out)


def _ring_stack(padded: np.ndarray) -> list[np.ndarray]:
    """The 8 neighbor planes of every interior pixel, in ring order."""
    return [padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
            for dy, dx in _RING]


def _transitions(ring: list[np.ndarray]) -> np.ndarray:
    """Number of 0->1 steps walking the ring once (wrapping)."""
    a = np.zeros(ring[0].shape, dtype=np.int8)
    for i in range(8):
        a += (~ring[i] & ring[(i + 1) % 8]).astype(np.int8)
    return a


def thin(img: BinaryImage) -> BinaryImage:
    """Zhang-Suen boundary peeling to a one-pixel-wide 8-connected skeleton.

    The two sub-iterations repeat until nothing changes; a final pass
    erodes any residual 2x2 blocks (rare staircase leftovers) by removing
    simple points.
    """
    a = img.ridge.copy()
    while True:
        changed = False
        for step in (0, 1):
            padded = np.zeros((a.shape[0] + 2, a.shape[1] + 2), dtype=bool)
            padded[1:-1, 1:-1] = a
            ring = _ring_stack(padded)
            n, ne, e, se, s, sw, wst, nw = ring
            b = sum(r.astype(np.int8) for r in ring)
            trans = _transitions(ring)
            cond = a & (b >= 2) & (b <= 6) & (trans == 1)
            if step == 0:
                cond &= ~(n & e & s) & ~(e & s & wst)
            else:
                cond &= ~(n & e & wst) & ~(n & s & wst)
            if cond.any():
                a[cond] = False
                changed = True
        if not changed:
            break
    _erode_blocks(a)
    return BinaryImage(a)


def _block_mask(a: np.ndarray) -> np.ndarray:
    """Pixels participating in any 2x2 all-ridge block."""
    q = a[:-1, :-1] & a[1:, :-1] & a[:-1, 1:] & a[1:, 1:]
    mask = np.zeros_like(a)
    mask[:-1, :-1] |= q
    mask[1:, :-1] |= q
    mask[:-1, 1:] |= q
    mask[1:, 1:] |= q
    return mask


def _erode_blocks(a: np.ndarray) -> None:
    """Clear residual 2x2 ridge blocks (in place).

    Simple points (one foreground arc around the ring) go first, which
    preserves connectivity. A block whose pixels are all non-simple is a
    solid mesh knot; its best-connected pixel is removed instead, where
    the surrounding 8-adjacency almost always keeps the knot connected.
    """
    h, w = a.shape
    for _ in range(h * w):
        mask = _block_mask(a)
        if not mask.any():
            return
        removed = False
        for y, x in zip(*np.nonzero(mask)):
            if not _in_block(a, y, x):
                continue
            ring = _ring_values(a, y, x)
            trans = sum((not ring[i]) and ring[(i + 1) % 8] for i in range(8))
            if trans == 1:
                a[y, x] = False
                removed = True
        if not removed:
            ys, xs = np.nonzero(mask)
            degrees = [sum(_ring_values(a, y, x)) for y, x in zip(ys, xs)]
            pick = int(np.argmax(degrees))
            a[ys[pick], xs[pick]] = False


def _in_block(a: np.ndarray, y: int, x: int) -> bool:
    h, w = a.shape
    for oy in (-1, 0):
        for ox in (-1, 0):
            yy, xx = y + oy, x + ox
            if 0 <= yy < h - 1 and 0 <= xx < w - 1:
                if a[yy, xx] and a[yy + 1, xx] and a[yy, xx + 1] and a[yy + 1, xx + 1]:
                    return True
    return False


def _ring_values(a: np.ndarray, y: int, x: int) -> list[bool]:
    h, w = a.shape
    return [
        bool(a[y + dy, x + dx]) if 0 <= y + dy < h and 0 <= x + dx < w else False
        for dy, dx in _RING
    ]


def crossing_number(a: np.ndarray, y: int, x: int) -> int:
    """Half the absolute 0/1 transition count around the 8-neighbor ring."""
    ring = _ring_values(a, y, x)
    return sum(abs(int(ring[i]) - int(ring[(i + 1) % 8])) for i in range(8)) // 2


def _neighbors_of(a: np.ndarray, y: int, x: int) -> list[tuple[int, int]]:
    h, w = a.shape
    return [
        (y + dy, x + dx)
        for dy, dx in _RING
        if 0 <= y + dy < h and 0 <= x + dx < w and a[y + dy, x + dx]
    ]


def _trace(a: np.ndarray, start: tuple[int, int], first: tuple[int, int], steps: int):
    """Walk the skeleton from ``start`` through ``first``; stop at a branch
    point, a dead end, or after ``steps`` moves. Returns the path walked."""
    path = [start, first]
    visited = {start, first}
    for _ in range(steps - 1):
        nxt = [p for p in _neighbors_of(a, *path[-1]) if p not in visited]
        if len(nxt) != 1:
            break
        path.append(nxt[0])
        visited.add(nxt[0])
    return path


def _direction_deg(frm: tuple[int, int], to: tuple[int, int]) -> float:
    return math.degrees(math.atan2(to[0] - frm[0], to[1] - frm[1])) % 360.0


def _branch_starts(a: np.ndarray, y: int, x: int) -> list[tuple[int, int]]:
    """One starting pixel per branch: ring neighbors that do not continue a
    previous ring-adjacent neighbor."""
    ring = _ring_values(a, y, x)
    starts = []
    for i in range(8):
        if ring[i] and not ring[i - 1]:
            dy, dx = _RING[i]
            starts.append((y + dy, x + dx))
    return starts


def _ending_angle(a: np.ndarray, y: int, x: int) -> float:
    starts = _branch_starts(a, y, x)
    if not starts:
        return 0.0
    path = _trace(a, (y, x), starts[0], _TRACE_STEPS)
    return _direction_deg(path[0], path[-1])


def _bifurcation_angle(a: np.ndarray, y: int, x: int) -> float:
    """Direction of the stem branch: the one most separated (circularly)
    from the other two."""
    dirs = []
    for s in _branch_starts(a, y, x):
        path = _trace(a, (y, x), s, _TRACE_STEPS)
        dirs.append(_direction_deg(path[0], path[-1]))
    if not dirs:
        return 0.0
    if len(dirs) == 1:
        return dirs[0]
    best_i, best_sep = 0, -1.0
    for i, d in enumerate(dirs):
        sep = min(_circ_diff(d, o) for j, o in enumerate(dirs) if j != i)
        if sep > best_sep:
            best_i, best_sep = i, sep
    return dirs[best_i]


def _circ_diff(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def extract_minutiae(skel: BinaryImage, min_ridge_len: int = 8) -> list[Minutia]:
    """Classify skeleton pixels by crossing number.

    CN 1 is a ridge ending, CN 3 a bifurcation. Two endings joined by an
    unbranched skeleton path shorter than ``min_ridge_len`` collapse to a
    single short-ridge minutia at the path midpoint. Minutiae within 5
    pixels of the image border are dropped.
    """
    a = skel.ridge
    if _block_mask(a).any():
        raise ValueError("input is not a thinned skeleton (contains a 2x2 ridge block)")
    h, w = a.shape
    ys, xs = np.nonzero(a)
    endings: list[tuple[int, int]] = []
    bifurcations: list[tuple[int, int]] = []
    for y, x in zip(ys.tolist(), xs.tolist()):
        cn = crossing_number(a, y, x)
        if cn == 1:
            endings.append((y, x))
        elif cn == 3:
            bifurcations.append((y, x))

    minutiae: list[Minutia] = []
    consumed: set[tuple[int, int]] = set()
    ending_set = set(endings)
    for pos in endings:
        if pos in consumed:
            continue
        starts = _branch_starts(a, *pos)
        if len(starts) != 1:
            continue
        path = _trace(a, pos, starts[0], min_ridge_len + 1)
        other = path[-1]
        if (
            other in ending_set
            and other != pos
            and other not in consumed
            and len(path) < min_ridge_len
            and all(p == pos or p == other or crossing_number(a, *p) == 2 for p in path)
        ):
            consumed.add(pos)
            consumed.add(other)
            my, mx = path[len(path) // 2]
            minutiae.append(Minutia(mx, my, _direction_deg(path[0], path[-1]), SHORT_RIDGE))
    for y, x in endings:
        if (y, x) not in consumed:
            minutiae.append(Minutia(x, y, _ending_angle(a, y, x), ENDING))
    for y, x in bifurcations:
        minutiae.append(Minutia(x, y, _bifurcation_angle(a, y, x), BIFURCATION))

    margin = BORDER_MARGIN
    kept = [
        m
        for m in minutiae
        if margin <= m.x < w - margin and margin <= m.y < h - margin
    ]
    kept.sort(key=lambda m: (m.y, m.x))
    return kept


def extract_template(
    img: GrayImage, block: int = 16, min_ridge_len: int = 8
) -> FingerprintTemplate:
    """Full image-to-template pipeline: binarize, thin, extract."""
    skel = thin(binarize(img, block=block))
    minutiae = extract_minutiae(skel, min_ridge_len=min_ridge_len)
    return FingerprintTemplate(tuple(minutiae), img.width, img.height)


# -- matching -----------------------------------------------------------------

def _arrays(t: FingerprintTemplate):
    pos = np.array([(m.x, m.y) for m in t.minutiae], dtype=np.float64).reshape(-1, 2)
    ang = np.array([m.angle for m in t.minutiae], dtype=np.float64)
    kind = np.array([KINDS.index(m.kind) for m in t.minutiae], dtype=np.int64)
    return pos, ang, kind


def match_templates(
    a: FingerprintTemplate,
    b: FingerprintTemplate,
    r_tol: float = 10.0,
    theta_tol: float = 15.0,
) -> MatchResult:
    """Best rigid alignment over all same-kind reference pairs.

    Each reference pair fixes (dx, dy, dtheta); the offset angle dtheta
    itself must stay within ``theta_tol`` (the tolerated offset angle).
    Minutiae then pair greedily, one-to-one, when they share a kind and
    land within ``r_tol`` pixels and ``theta_tol`` degrees. Ties between
    transforms break toward the smaller |dtheta|, then smaller |dx|+|dy|.
    """
    na, nb = len(a), len(b)
    if na == 0 and nb == 0:
        return MatchResult(0.0, 0, (0.0, 0.0, 0.0))
    pa, aa, ka = _arrays(a)
    pb, ab, kb = _arrays(b)
    best_matches = 0
    best_transform = (0.0, 0.0, 0.0)
    cap = min(na, nb)
    for i in range(na):
        if best_matches == cap:
            break
        for j in range(nb):
            if ka[i] != kb[j]:
                continue
            dtheta = (ab[j] - aa[i] + 180.0) % 360.0 - 180.0
            if abs(dtheta) > theta_tol:
                continue
            rad = math.radians(dtheta)
            rot = np.array(
                [[math.cos(rad), -math.sin(rad)], [math.sin(rad), math.cos(rad)]]
            )
            moved = pa @ rot.T
            t = pb[j] - moved[i]
            moved = moved + t
            angles = (aa + dtheta) % 360.0
            matches = _greedy_pairs(moved, angles, ka, pb, ab, kb, r_tol, theta_tol)
            key = (-matches, abs(dtheta), abs(t[0]) + abs(t[1]))
            best_key = (
                -best_matches,
                abs(best_transform[2]),
                abs(best_transform[0]) + abs(best_transform[1]),
            )
            if key < best_key:
                best_matches = matches
                best_transform = (float(t[0]), float(t[1]), float(dtheta))
            if best_matches == cap:
                break
    similarity = 2.0 * best_matches / (na + nb) if (na + nb) else 0.0
    return MatchResult(similarity, best_matches, best_transform)


def _greedy_pairs(pa, aa, ka, pb, ab, kb, r_tol, theta_tol) -> int:
    diff = pa[:, None, :] - pb[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    ang = np.abs(aa[:, None] - ab[None, :]) % 360.0
    ang = np.minimum(ang, 360.0 - ang)
    ok = (dist <= r_tol) & (ang <= theta_tol) & (ka[:, None] == kb[None, :])
    ii, jj = np.nonzero(ok)
    if ii.size == 0:
        return 0
    cand = sorted(zip(dist[ii, jj], ang[ii, jj], ii.tolist(), jj.tolist()))
    used_a = set()
    used_b = set()
    matches = 0
    for _, _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches += 1
    return matches


def verify_fingerprint(
    probe: GrayImage,
    enrolled: FingerprintTemplate,
    threshold: float = DEFAULT_THRESHOLD,
    block: int = 16,
    min_ridge_len: int = 8,
    r_tol: float = 10.0,
    theta_tol: float = 15.0,
) -> tuple[MatchResult, bool]:
    """Run the full pipeline on the probe image and match against the
    enrolled template; accept iff similarity >= threshold (inclusive)."""
    probe_template = extract_template(probe, block=block, min_ridge_len=min_ridge_len)
    result = match_templates(probe_template, enrolled, r_tol=r_tol, theta_tol=theta_tol)
    return result, result.similarity >= threshold


# -- serialization ------------------------------------------------------------

def template_to_dict(t: FingerprintTemplate) -> dict:
    return {
        "version": TEMPLATE_FORMAT_VERSION,
        "width": t.width,
        "height": t.height,
        "minutiae": [
            {"x": m.x, "y": m.y, "angle": m.angle, "kind": m.kind} for m in t.minutiae
        ],
    }


def template_from_dict(doc: dict) -> FingerprintTemplate:
    if doc.get("version") != TEMPLATE_FORMAT_VERSION:
        raise ValueError(f"unsupported template format version {doc.get('version')!r}")
    minutiae = tuple(
        Minutia(m["x"], m["y"], m["angle"], m["kind"]) for m in doc["minutiae"]
    )
    return FingerprintTemplate(minutiae, int(doc["width"]), int(doc["height"]))


def template_to_json(t: FingerprintTemplate) -> str:
    return jsonio.dumps(template_to_dict(t))


def template_from_json(text: str) -> FingerprintTemplate:
    return template_from_dict(json.loads(text))
