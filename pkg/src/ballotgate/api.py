"""JSON-over-HTTP service for the polling-station console.

Endpoints (all responses, success or error, carry ``schema_version``;
every 4xx/5xx body carries ``error_code`` and ``message``):

    POST /api/enroll                multipart: face, fingerprint images
    POST /api/session               open a voting session
    POST /api/session/{id}/thumb    multipart: image
    POST /api/session/{id}/face     multipart: image
    POST /api/session/{id}/vote     JSON {candidate_id}
    GET  /api/tally                 counts + turnout
    GET  /api/ballot                candidate list
    GET  /api/audit?since=          audit events

GET endpoints never mutate state; enrollment and vote casting persist
the registry store before answering.
"""

from __future__ import annotations

import io
import logging
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import detector, facerec, registry as registry_mod
from .config import ApiConfig
from .election import (
    AlreadyVotedError,
    Election,
    NotVerifiedError,
    SessionTimeoutError,
    UnknownCandidateError,
    WrongStateError,
    load_ballot,
    load_tally_counts,
)
from .imaging import RAW8, GrayImage, to_grayscale
from .registry import (
    BlankFingerprintError,
    DuplicateEnrollmentError,
    FaceNotFoundError,
    Registry,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _json(payload: dict, status: int = 200) -> JSONResponse:
    return JSONResponse({"schema_version": SCHEMA_VERSION, **payload}, status_code=status)


def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
    return _json({"error_code": code, "message": message, **extra}, status=status)


def _decode_image(data: bytes) -> GrayImage:
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.mode in ("L", "I;16", "I"):
                return GrayImage(np.asarray(im.convert("L"), dtype=np.uint8), RAW8)
            return to_grayscale(np.asarray(im.convert("RGB")))
    except Exception as exc:
        raise ValueError(f"cannot decode image: {exc}") from exc


def build_components(config: ApiConfig) -> tuple[Registry, Election]:
    """Load model, store, ballot and cascade per the config paths."""
    model = facerec.load_model(config.model_path) if Path(config.model_path).exists() else None
    cascade = (
        detector.load_cascade(config.cascade_path)
        if config.cascade_path and Path(config.cascade_path).exists()
        else None
    )
    params = dict(
        face_threshold=config.face_threshold,
        fp_threshold=config.fp_threshold,
        q_max=config.q_max,
        k=config.k,
        r_tol=config.r_tol,
        theta_tol=config.theta_tol,
        cascade=cascade,
        pre_cropped=config.pre_cropped,
    )
    if Path(config.registry_path).exists():
        reg = Registry.load(config.registry_path, model=model, **params)
    else:
        reg = Registry(model, **params)
    ballot = load_ballot(config.ballot_path)
    election = Election(
        reg,
        ballot,
        audit_path=config.audit_path,
        session_timeout_s=config.session_timeout_s,
        initial_counts=load_tally_counts(config.tally_path),
    )
    return reg, election


def create_app(election: Election, config: ApiConfig, persist: bool = True) -> FastAPI:
    app = FastAPI(title="ballotgate", docs_url=None, redoc_url=None)
    reg = election.registry

    def save_store() -> None:
        if persist:
            reg.save(config.registry_path)
            election.save_tally(config.tally_path)

    @app.exception_handler(RequestValidationError)
    async def on_validation(request: Request, exc: RequestValidationError):
        return _error(400, "bad_request", str(exc.errors()[:1]))

    @app.exception_handler(StarletteHTTPException)
    async def on_http_error(request: Request, exc: StarletteHTTPException):
        return _error(exc.status_code, "http_error", str(exc.detail))

    @app.exception_handler(Exception)
    async def on_internal(request: Request, exc: Exception):
        log.exception("unhandled error")
        return _error(500, "internal_error", str(exc))

    def get_session(session_id: str):
        session = election.sessions.get(session_id)
        if session is None:
            return None, _error(404, "unknown_session", f"no session {session_id!r}")
        return session, None

    @app.post("/api/enroll")
    async def enroll(face: UploadFile, fingerprint: UploadFile):
        try:
            face_img = _decode_image(await face.read())
            fp_img = _decode_image(await fingerprint.read())
        except ValueError as exc:
            return _error(400, "malformed_image", str(exc))
        try:
            encrypted_id = reg.enroll(face_img, fp_img)
        except DuplicateEnrollmentError as exc:
            election.record_duplicate_enrollment(exc.voter_no, exc.modality)
            return _error(
                409,
                "duplicate_enrollment",
                str(exc),
                duplicate_of=exc.voter_no,
                modality=exc.modality,
            )
        except FaceNotFoundError as exc:
            return _error(400, "face_not_found", str(exc))
        except BlankFingerprintError as exc:
            return _error(400, "blank_fingerprint", str(exc))
        save_store()
        return _json({"encrypted_id": encrypted_id})

    @app.post("/api/session")
    async def new_session():
        session = election.new_session()
        return _json({"session_id": session.session_id, "state": session.state})

    @app.post("/api/session/{session_id}/thumb")
    async def thumb(session_id: str, image: UploadFile):
        session, err = get_session(session_id)
        if err:
            return err
        try:
            probe = _decode_image(await image.read())
        except ValueError as exc:
            return _error(400, "malformed_image", str(exc))
        try:
            ok = election.verify_thumb(session, probe)
        except SessionTimeoutError as exc:
            return _error(410, "session_timeout", str(exc))
        except WrongStateError as exc:
            return _error(409, "wrong_state", str(exc))
        if not ok:
            return _error(401, "thumb_rejected", "fingerprint not recognized", state=session.state)
        return _json({"state": session.state, "similarity": session.similarity})

    @app.post("/api/session/{session_id}/face")
    async def face_check(session_id: str, image: UploadFile):
        session, err = get_session(session_id)
        if err:
            return err
        try:
            probe = _decode_image(await image.read())
        except ValueError as exc:
            return _error(400, "malformed_image", str(exc))
        try:
            ok = election.verify_face(session, probe)
        except SessionTimeoutError as exc:
            return _error(410, "session_timeout", str(exc))
        except WrongStateError as exc:
            return _error(409, "wrong_state", str(exc))
        if not ok:
            return _error(
                401, "face_rejected", "face verification failed",
                state=session.state, similarity=session.similarity,
            )
        return _json({"state": session.state, "similarity": session.similarity})

    @app.post("/api/session/{session_id}/vote")
    async def vote(session_id: str, body: dict):
        session, err = get_session(session_id)
        if err:
            return err
        candidate_id = body.get("candidate_id")
        if not isinstance(candidate_id, str):
            return _error(400, "bad_request", "candidate_id (string) is required")
        try:
            receipt = election.cast_vote(session, candidate_id)
        except SessionTimeoutError as exc:
            return _error(410, "session_timeout", str(exc))
        except AlreadyVotedError as exc:
            save_store()
            return _error(403, "already_voted", str(exc))
        except NotVerifiedError as exc:
            return _error(409, "not_verified", str(exc))
        except UnknownCandidateError as exc:
            return _error(400, "unknown_candidate", str(exc))
        save_store()
        return _json(
            {
                "receipt": {
                    "session_id": receipt.session_id,
                    "candidate_id": receipt.candidate_id,
                    "cast_at": receipt.cast_at,
                }
            }
        )

    @app.get("/api/tally")
    async def tally():
        counts, turnout = election.tally()
        return _json({"counts": counts, "turnout": turnout})

    @app.get("/api/ballot")
    async def ballot():
        return _json(
            {
                "election_name": election.ballot.election_name,
                "candidates": [
                    {"id": c.id, "name": c.name} for c in election.ballot.candidates
                ],
            }
        )

    @app.get("/api/audit")
    async def audit(since: float | None = None):
        events = election.audit_events(since)
        return _json(
            {"events": [{"kind": e.kind, "detail": e.detail, "at": e.at} for e in events]}
        )

    return app


def serve(config: ApiConfig) -> None:
    """Build the service from config paths and block serving it."""
    import uvicorn

    _, election = build_components(config)
    app = create_app(election, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
