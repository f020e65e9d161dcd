"""Eigenface recognition with a two-stage verifier.

Faces are flattened normalized crops (42x42 = 1764 values by default).
A principal-component model maps them to low-dimensional coordinates;
stage 1 picks a candidate identity by nearest neighbors, stage 2 scores
how well the probe fits inside that identity's own subspace and rejects
anything under the similarity threshold (0.90 by default, boundary
inclusive).

Similarity is 1 minus the normalized residual of projecting the probe's
coordinates onto the candidate subspace: 1.0 when the probe lies in the
span, 0.0 when it is orthogonal to it.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import jsonio

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 0.90

_ORTHO_TOL = 1e-8


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    a.setflags(write=False)
    return a


def _canonical_sign(basis: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Eigen/singular vectors have arbitrary sign; fixing it makes fitted
    models reproducible across runs and platforms.
    """
    out = basis.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        lead = int(np.argmax(np.abs(col)))
        if col[lead] < 0:
            out[:, j] = -col
    return out


def _pad_orthonormal(basis: np.ndarray, m: int) -> np.ndarray:
    """Extend with canonical directions orthogonalized against the columns.

    Used when the data rank is below the requested component count (for
    example identical training samples); padding keeps the orthonormality
    contract while the extra eigenvalues are zero.
    """
    d = basis.shape[0]
    cols = [basis[:, j] for j in range(basis.shape[1])]
    j = 0
    while len(cols) < m and j < d:
        v = np.zeros(d)
        v[j] = 1.0
        for c in cols:
            v -= (c @ v) * c
        norm = np.linalg.norm(v)
        if norm > 0.5:
            cols.append(v / norm)
        j += 1
    return np.column_stack(cols) if cols else np.zeros((d, 0))


@dataclass(frozen=True)
class EigenModel:
    """Mean face plus an orthonormal eigenvector basis (columns) with
    eigenvalues sorted descending."""

    mean: np.ndarray         # (d,)
    basis: np.ndarray        # (d, m)
    eigenvalues: np.ndarray  # (m,)

    def __post_init__(self):
        object.__setattr__(self, "mean", _freeze(self.mean))
        object.__setattr__(self, "basis", _freeze(self.basis))
        object.__setattr__(self, "eigenvalues", _freeze(self.eigenvalues))

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class FaceTemplate:
    identity: str
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _freeze(self.coords))

    def __eq__(self, other):
        return (
            isinstance(other, FaceTemplate)
            and self.identity == other.identity
            and np.array_equal(self.coords, other.coords)
        )


@dataclass(frozen=True)
class IdentitySubspace:
    identity: str
    basis: np.ndarray  # (m, q), orthonormal columns

    def __post_init__(self):
        object.__setattr__(self, "basis", _freeze(self.basis))


@dataclass(frozen=True)
class VerifyResult:
    candidate: str
    similarity: float
    accepted: bool
    knn_distance: float


def fit_eigenmodel(training, m: int) -> EigenModel:
    """Principal components of mean-centered face vectors.

    Uses the n x n Gram matrix when there are fewer samples than
    dimensions, the d x d covariance otherwise; both use the n-1 divisor,
    so two samples yield the single eigenvalue ||x1 - x2||^2 / 2.
    ``m`` is clamped to min(d, n-1).
    """
    X = np.asarray(training, dtype=np.float64)
    if X.ndim != 2:
        X = np.stack([np.asarray(v, dtype=np.float64).ravel() for v in training])
    n, d = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 training samples, got {n}")
    if m < 1:
        raise ValueError("m must be >= 1")
    m = min(m, d, n - 1)
    mean = X.mean(axis=0)
    Xc = X - mean

    if n < d:
        gram = Xc @ Xc.T
        evals, evecs = np.linalg.eigh(gram)
        idx = np.argsort(evals)[::-1][:m]
        scatter_evals = evals[idx]
        cols = []
        tol = max(scatter_evals[0] if len(scatter_evals) else 0.0, 0.0) * 1e-12
        for rank, i in enumerate(idx):
            if scatter_evals[rank] > tol and scatter_evals[rank] > 0.0:
                v = Xc.T @ evecs[:, i]
                cols.append(v / np.linalg.norm(v))
        basis = np.column_stack(cols) if cols else np.zeros((d, 0))
        eigenvalues = np.maximum(scatter_evals, 0.0) / (n - 1)
    else:
        cov = (Xc.T @ Xc) / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        idx = np.argsort(evals)[::-1][:m]
        eigenvalues = np.maximum(evals[idx], 0.0)
        tol = max(eigenvalues[0], 0.0) * 1e-12
        keep = eigenvalues > tol
        basis = evecs[:, idx][:, keep]

    if basis.shape[1] < m:
        basis = _pad_orthonormal(basis, m)
    basis = _canonical_sign(basis)
    return EigenModel(mean, basis, eigenvalues)


def project(model: EigenModel, x) -> np.ndarray:
    """Eigen coordinates of a face vector: basis^T (x - mean)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.d:
        raise ValueError(f"vector has dimension {x.shape[0]}, model expects {model.d}")
    return model.basis.T @ (x - model.mean)


def reconstruct(model: EigenModel, coords) -> np.ndarray:
    return model.mean + model.basis @ np.asarray(coords, dtype=np.float64)


def knn_classify(gallery: list[FaceTemplate], query, k: int) -> tuple[str, float]:
    """Majority label among the k nearest templates (Euclidean).

    Count ties break toward the label with smaller mean distance inside
    the k-set, then the lexicographically smaller label. Equal distances
    at the k-th position resolve in gallery order. The returned distance
    is to the winning label's overall nearest template.
    """
    if not gallery:
        raise ValueError("gallery is empty")
    if not 1 <= k <= len(gallery):
        raise ValueError(f"k must be in 1..{len(gallery)}, got {k}")
    query = np.asarray(query, dtype=np.float64).ravel()
    dists = np.array([np.linalg.norm(t.coords - query) for t in gallery])
    nearest = np.argsort(dists, kind="stable")[:k]
    counts = Counter(gallery[i].identity for i in nearest)
    top = max(counts.values())
    contenders = [label for label, c in counts.items() if c == top]
    if len(contenders) > 1:
        mean_d = {
            label: float(np.mean([dists[i] for i in nearest if gallery[i].identity == label]))
            for label in contenders
        }
        best = min(mean_d.values())
        contenders = sorted(label for label, md in mean_d.items() if md <= best + 1e-12)
    winner = contenders[0]
    win_dist = float(min(dists[i] for i in range(len(gallery)) if gallery[i].identity == winner))
    return winner, win_dist


def fit_identity_subspaces(gallery: list[FaceTemplate], q_max: int) -> list[IdentitySubspace]:
    """One orthonormal subspace per identity spanning its (uncentered)
    coordinate vectors, truncated to the min(q_max, sample count) leading
    directions. Output sorted by identity."""
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    by_identity: dict[str, list[np.ndarray]] = {}
    for t in gallery:
        by_identity.setdefault(t.identity, []).append(t.coords)
    out = []
    for identity in sorted(by_identity):
        T = np.stack(by_identity[identity])          # (n_i, m)
        q = min(q_max, T.shape[0], T.shape[1])
        _, _, vh = np.linalg.svd(T, full_matrices=False)
        basis = _canonical_sign(vh[:q].T)
        out.append(IdentitySubspace(identity, basis))
    return out


def subspace_similarity(coords, subspace: IdentitySubspace) -> float:
    """1 - ||c - P c|| / ||c|| where P projects onto the subspace, clamped
    to [0, 1]; a zero vector scores 0."""
    c = np.asarray(coords, dtype=np.float64).ravel()
    norm = np.linalg.norm(c)
    if norm == 0.0:
        return 0.0
    B = subspace.basis
    if B.shape[1] == 0:
        return 0.0
    residual = c - B @ (B.T @ c)
    return float(np.clip(1.0 - np.linalg.norm(residual) / norm, 0.0, 1.0))


def cascaded_verify(
    model: EigenModel,
    subspaces: list[IdentitySubspace] | dict[str, IdentitySubspace],
    gallery: list[FaceTemplate],
    probe,
    threshold: float = DEFAULT_THRESHOLD,
    k: int = 1,
) -> VerifyResult:
    """Two-stage verification: nearest-neighbor candidate selection, then
    subspace-residual similarity against that candidate (accept iff the
    similarity reaches the threshold, boundary inclusive)."""
    by_identity = (
        subspaces if isinstance(subspaces, dict) else {s.identity: s for s in subspaces}
    )
    coords = project(model, probe)
    candidate, knn_distance = knn_classify(gallery, coords, k)
    if candidate not in by_identity:
        raise ValueError(f"no identity subspace for candidate {candidate!r}")
    similarity = subspace_similarity(coords, by_identity[candidate])
    return VerifyResult(candidate, similarity, similarity >= threshold, knn_distance)


# -- serialization ------------------------------------------------------------

def model_to_json(model: EigenModel) -> str:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "d": model.d,
        "m": model.m,
        "mean": model.mean,
        "basis": model.basis.ravel(order="F"),  # column-major flat
        "eigenvalues": model.eigenvalues,
    }
    return jsonio.dumps(doc)


def model_from_json(text: str) -> EigenModel:
    doc = json.loads(text)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    d, m = int(doc["d"]), int(doc["m"])
    basis = np.asarray(doc["basis"], dtype=np.float64).reshape((d, m), order="F")
    return EigenModel(
        np.asarray(doc["mean"], dtype=np.float64),
        basis,
        np.asarray(doc["eigenvalues"], dtype=np.float64),
    )


def save_model(model: EigenModel, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> EigenModel:
    with open(path, "r", encoding="ascii") as fh:
        return model_from_json(fh.read())


def template_to_dict(t: FaceTemplate) -> dict:
    return {"identity": t.identity, "coords": t.coords}


def template_from_dict(doc: dict) -> FaceTemplate:
    return FaceTemplate(str(doc["identity"]), np.asarray(doc["coords"], dtype=np.float64))
