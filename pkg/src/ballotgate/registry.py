"""Voter enrollment store.

Each voter record binds a counter-assigned voter number, a keyed opaque
identifier, one face template (eigen coordinates) and one fingerprint
template, plus the has-voted flag. Enrollment rejects anyone whose face
OR fingerprint already matches a stored record at the 0.90 threshold.

The store is a single-writer resource: every mutation runs under one
lock, and the duplicate check plus insert is a single atomic step.
Persistence is a JSON-lines file (header line, then one record per
line) written atomically via rename.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detector, facerec, fingerprint, jsonio
from .imaging import GrayImage, Rect, extract_window, full_rect

STORE_FORMAT_VERSION = 1
SECRET_ENV_VAR = "BALLOTGATE_SECRET"

FACE_MODALITY = "face"
FINGERPRINT_MODALITY = "fingerprint"


class RegistryError(Exception):
    pass


class DuplicateEnrollmentError(RegistryError):
    """The applicant already matches a stored record."""

    def __init__(self, voter_no: int, modality: str, similarity: float):
        super().__init__(
            f"duplicate {modality} enrollment: matches voter {voter_no} "
            f"at similarity {similarity:.3f}"
        )
        self.voter_no = voter_no
        self.modality = modality
        self.similarity = similarity


class FaceNotFoundError(RegistryError):
    pass


class BlankFingerprintError(RegistryError):
    pass


class RegistryCorruptError(RegistryError):
    def __init__(self, record_index: int, reason: str):
        super().__init__(f"corrupted store: record {record_index}: {reason}")
        self.record_index = record_index


@dataclass
class VoterRecord:
    voter_no: int
    encrypted_id: str
    face_template: facerec.FaceTemplate
    fp_template: fingerprint.FingerprintTemplate
    has_voted: bool = False
    enrolled_at: float = 0.0

    def __eq__(self, other):
        return (
            isinstance(other, VoterRecord)
            and self.voter_no == other.voter_no
            and self.encrypted_id == other.encrypted_id
            and self.face_template == other.face_template
            and self.fp_template == other.fp_template
            and self.has_voted == other.has_voted
            and self.enrolled_at == other.enrolled_at
        )


def load_secret_key(env: dict | None = None) -> bytes:
    """Read the hex signing key from the environment (never persisted)."""
    env = os.environ if env is None else env
    raw = env.get(SECRET_ENV_VAR, "")
    if not raw:
        raise RegistryError(f"{SECRET_ENV_VAR} is not set")
    try:
        return bytes.fromhex(raw)
    except ValueError as exc:
        raise RegistryError(f"{SECRET_ENV_VAR} is not valid hex") from exc


def encrypt_id(counter: int, key: bytes) -> str:
    """Keyed one-way identifier for a voter counter: 32 hex chars.

    HMAC-SHA256 truncated to 128 bits; the salt increments until the hex
    string does not echo the counter's decimal rendering anywhere, so the
    identifier never leaks the enrollment order.
    """
    if not key:
        raise ValueError("key must be non-empty")
    token = str(counter)
    salt = 0
    while True:
        msg = counter.to_bytes(8, "big", signed=False) + salt.to_bytes(4, "big")
        digest = hmac.new(key, msg, hashlib.sha256).hexdigest()[:32]
        if token not in digest:
            return digest
        salt += 1


class Registry:
    """Enrollment store bound to a fixed eigen model.

    The eigen model is fitted offline (see the ``fit-model`` command) and
    stays constant; enrollments refit only the per-identity subspaces.
    Gallery identities are the decimal voter numbers.
    """

    def __init__(
        self,
        model: facerec.EigenModel | None,
        key: bytes | None = None,
        face_threshold: float = 0.90,
        fp_threshold: float = 0.90,
        q_max: int = 3,
        k: int = 1,
        r_tol: float = 10.0,
        theta_tol: float = 15.0,
        cascade: detector.Cascade | None = None,
        pre_cropped: bool = True,
        clock=time.time,
    ):
        self.model = model
        self._key = key
        self.face_threshold = face_threshold
        self.fp_threshold = fp_threshold
        self.q_max = q_max
        self.k = k
        self.r_tol = r_tol
        self.theta_tol = theta_tol
        self.cascade = cascade
        self.pre_cropped = pre_cropped
        self._clock = clock
        self.records: list[VoterRecord] = []
        self.next_counter = 1
        self._subspaces: dict[str, facerec.IdentitySubspace] = {}
        self._lock = threading.RLock()

    # -- internals -------------------------------------------------------

    @property
    def key(self) -> bytes:
        if self._key is None:
            self._key = load_secret_key()
        return self._key

    @property
    def gallery(self) -> list[facerec.FaceTemplate]:
        return [r.face_template for r in self.records]

    @property
    def subspaces(self) -> dict[str, facerec.IdentitySubspace]:
        return self._subspaces

    def _refit_subspaces(self) -> None:
        if self.records:
            fitted = facerec.fit_identity_subspaces(self.gallery, self.q_max)
            self._subspaces = {s.identity: s for s in fitted}
        else:
            self._subspaces = {}

    def _require_model(self) -> facerec.EigenModel:
        if self.model is None:
            raise RegistryError("registry has no eigen model loaded")
        return self.model

    def face_vector(self, face_img: GrayImage) -> np.ndarray:
        """Locate (unless pre-cropped) and vectorize a face image."""
        model = self._require_model()
        side = math.isqrt(model.d)
        if self.pre_cropped:
            box = full_rect(face_img)
        else:
            if self.cascade is None:
                raise RegistryError("detection requested but no cascade configured")
            found = detector.detect_faces(face_img, self.cascade)
            if not found:
                raise FaceNotFoundError("no face detected in the image")
            box = found[0].box
        return extract_window(face_img, box, side).pixels.ravel()

    def _face_dup_scan(self, coords: np.ndarray):
        """Best stage-2 similarity of the coords against every record."""
        best = (-1.0, None)
        for rec in self.records:
            s = facerec.subspace_similarity(coords, self._subspaces[rec.face_template.identity])
            if s > best[0]:
                best = (s, rec)
        return best

    def _fp_dup_scan(self, template: fingerprint.FingerprintTemplate):
        best = (-1.0, None)
        for rec in self.records:
            s = fingerprint.match_templates(
                template, rec.fp_template, r_tol=self.r_tol, theta_tol=self.theta_tol
            ).similarity
            if s > best[0]:
                best = (s, rec)
        return best

    # -- operations ------------------------------------------------------

    def enroll(self, face_img: GrayImage, fp_img: GrayImage) -> str:
        """Register a new voter; returns the encrypted id.

        Rejects with DuplicateEnrollmentError when either biometric
        matches any stored record at its threshold; a rejected attempt
        stores nothing and consumes no counter.
        """
        with self._lock:
            model = self._require_model()
            vector = self.face_vector(face_img)
            coords = facerec.project(model, vector)
            fp_template = fingerprint.extract_template(fp_img)
            if len(fp_template) == 0:
                raise BlankFingerprintError("no minutiae found in the fingerprint image")

            face_sim, face_rec = self._face_dup_scan(coords)
            if face_rec is not None and face_sim >= self.face_threshold:
                raise DuplicateEnrollmentError(face_rec.voter_no, FACE_MODALITY, face_sim)
            fp_sim, fp_rec = self._fp_dup_scan(fp_template)
            if fp_rec is not None and fp_sim >= self.fp_threshold:
                raise DuplicateEnrollmentError(fp_rec.voter_no, FINGERPRINT_MODALITY, fp_sim)

            voter_no = self.next_counter
            record = VoterRecord(
                voter_no=voter_no,
                encrypted_id=encrypt_id(voter_no, self.key),
                face_template=facerec.FaceTemplate(str(voter_no), coords),
                fp_template=fp_template,
                enrolled_at=float(self._clock()),
            )
            self.records.append(record)
            self.next_counter = voter_no + 1
            self._refit_subspaces()
            return record.encrypted_id

    def lookup_by_fingerprint(self, probe: GrayImage):
        """Best fingerprint match across all records.

        Returns (record, similarity) when the best similarity reaches the
        threshold, else None.
        """
        with self._lock:
            if not self.records:
                return None
            template = fingerprint.extract_template(probe)
            sim, rec = self._fp_dup_scan(template)
            if rec is not None and sim >= self.fp_threshold:
                return rec, sim
            return None

    def verify_face(self, probe: GrayImage) -> facerec.VerifyResult:
        """Cascaded face verification of a probe against the whole gallery."""
        with self._lock:
            if not self.records:
                raise RegistryError("no voters enrolled")
            vector = self.face_vector(probe)
            return facerec.cascaded_verify(
                self._require_model(),
                self._subspaces,
                self.gallery,
                vector,
                threshold=self.face_threshold,
                k=self.k,
            )

    def record_for(self, voter_no: int) -> VoterRecord:
        for rec in self.records:
            if rec.voter_no == voter_no:
                return rec
        raise KeyError(f"no record for voter {voter_no}")

    def mark_voted(self, voter_no: int) -> bool:
        """Atomically flip has_voted; returns False if it was already set."""
        with self._lock:
            rec = self.record_for(voter_no)
            if rec.has_voted:
                return False
            rec.has_voted = True
            return True

    def voted_count(self) -> int:
        with self._lock:
            return sum(r.has_voted for r in self.records)

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        """Write header + one record per line; atomic via temp-and-rename."""
        path = Path(path)
        with self._lock:
            lines = [jsonio.dumps({"version": STORE_FORMAT_VERSION, "next_counter": self.next_counter})]
            for rec in self.records:
                lines.append(
                    jsonio.dumps(
                        {
                            "voter_no": rec.voter_no,
                            "encrypted_id": rec.encrypted_id,
                            "enrolled_at": rec.enrolled_at,
                            "has_voted": rec.has_voted,
                            "face_template": facerec.template_to_dict(rec.face_template),
                            "fp_template": fingerprint.template_to_dict(rec.fp_template),
                        }
                    )
                )
        payload = "\n".join(lines) + "\n"
        fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="ascii") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path, model: facerec.EigenModel | None = None, key: bytes | None = None, **params) -> "Registry":
        reg = cls(model, key=key, **params)
        text = Path(path).read_text(encoding="ascii")
        lines = text.splitlines()
        if not lines:
            raise RegistryCorruptError(-1, "empty file")
        try:
            header = json.loads(lines[0])
            version = header["version"]
            next_counter = int(header["next_counter"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise RegistryCorruptError(-1, f"bad header: {exc}") from exc
        if version != STORE_FORMAT_VERSION:
            raise RegistryError(f"unsupported store version {version!r}")
        for index, line in enumerate(lines[1:]):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                record = VoterRecord(
                    voter_no=int(doc["voter_no"]),
                    encrypted_id=str(doc["encrypted_id"]),
                    face_template=facerec.template_from_dict(doc["face_template"]),
                    fp_template=fingerprint.template_from_dict(doc["fp_template"]),
                    has_voted=bool(doc["has_voted"]),
                    enrolled_at=float(doc["enrolled_at"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RegistryCorruptError(index, str(exc)) from exc
            reg.records.append(record)
        reg.next_counter = next_counter
        reg._refit_subspaces()
        return reg
