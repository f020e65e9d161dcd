"""Voting-day workflow.

A session walks Idle -> ThumbVerified -> FullyVerified -> Closed, in
that order only; any failure closes it. The thumb scan identifies the
voter by fingerprint lookup, the face scan must then verify as the SAME
voter (cross-verification), and only a fully verified session may cast.
One vote per voter is enforced through an atomic has-voted check-and-set
in the registry; votes are stored as anonymous tally increments plus a
receipt keyed by session, never as voter-to-candidate pairs.

Every rejection emits exactly one audit event; the audit log is
append-only (in memory, optionally mirrored to a JSON-lines file).
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .imaging import GrayImage
from .registry import Registry

IDLE = "Idle"
THUMB_VERIFIED = "ThumbVerified"
FULLY_VERIFIED = "FullyVerified"
CLOSED = "Closed"

THUMB_REJECTED = "ThumbRejected"
FACE_REJECTED = "FaceRejected"
DOUBLE_VOTE_ATTEMPT = "DoubleVoteAttempt"
DUPLICATE_ENROLLMENT = "DuplicateEnrollment"
VOTE_CAST = "VoteCast"

DEFAULT_SESSION_TIMEOUT_S = 120.0


class ElectionError(Exception):
    pass


class WrongStateError(ElectionError):
    """Operation invoked on a session in the wrong state."""


class NotVerifiedError(WrongStateError):
    """Vote cast without a fully verified session."""


class AlreadyVotedError(ElectionError):
    pass


class UnknownCandidateError(ElectionError):
    pass


class SessionTimeoutError(ElectionError):
    pass


@dataclass(frozen=True)
class Candidate:
    id: str
    name: str


@dataclass(frozen=True)
class Ballot:
    election_name: str
    candidates: tuple

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValueError("a ballot needs at least 2 candidates")
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate ids must be unique")

    def candidate_ids(self) -> list[str]:
        return [c.id for c in self.candidates]


def ballot_from_dict(doc: dict) -> Ballot:
    return Ballot(
        str(doc["election_name"]),
        tuple(Candidate(str(c["id"]), str(c["name"])) for c in doc["candidates"]),
    )


def load_ballot(path) -> Ballot:
    return ballot_from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class VoteReceipt:
    session_id: str
    candidate_id: str
    cast_at: float


@dataclass(frozen=True)
class AuditEvent:
    kind: str
    detail: str
    at: float


class VotingSession:
    """Per-voter console session; driven only through an Election."""

    def __init__(self, session_id: str, started_at: float):
        self.session_id = session_id
        self.started_at = started_at
        self.state = IDLE
        self.voter_no: int | None = None
        self.similarity: float | None = None


class Election:
    def __init__(
        self,
        registry: Registry,
        ballot: Ballot,
        audit_path=None,
        session_timeout_s: float = DEFAULT_SESSION_TIMEOUT_S,
        clock=time.time,
        initial_counts: dict | None = None,
    ):
        self.registry = registry
        self.ballot = ballot
        self.session_timeout_s = session_timeout_s
        self._clock = clock
        self._audit_path = Path(audit_path) if audit_path else None
        self._lock = threading.RLock()
        self._counts = {c.id: 0 for c in ballot.candidates}
        if initial_counts:
            unknown = set(initial_counts) - set(self._counts)
            if unknown:
                raise ValueError(f"tally counts for unknown candidates: {sorted(unknown)}")
            self._counts.update({k: int(v) for k, v in initial_counts.items()})
        self._receipts: list[VoteReceipt] = []
        self._events: list[AuditEvent] = []
        self.sessions: dict[str, VotingSession] = {}

    # -- audit ------------------------------------------------------------

    def _audit(self, kind: str, detail: str) -> AuditEvent:
        event = AuditEvent(kind, detail, float(self._clock()))
        with self._lock:
            self._events.append(event)
            if self._audit_path is not None:
                line = json.dumps({"kind": event.kind, "detail": event.detail, "at": event.at})
                with open(self._audit_path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        return event

    def audit_events(self, since: float | None = None) -> list[AuditEvent]:
        with self._lock:
            if since is None:
                return list(self._events)
            return [e for e in self._events if e.at >= since]

    def record_duplicate_enrollment(self, voter_no: int, modality: str) -> None:
        self._audit(
            DUPLICATE_ENROLLMENT,
            f"re-registration blocked: {modality} matches voter {voter_no}",
        )

    # -- sessions ----------------------------------------------------------

    def new_session(self) -> VotingSession:
        session = VotingSession(secrets.token_hex(8), float(self._clock()))
        with self._lock:
            self.sessions[session.session_id] = session
        return session

    def _check_timeout(self, session: VotingSession) -> None:
        if session.state == CLOSED:
            return
        if self._clock() - session.started_at > self.session_timeout_s:
            session.state = CLOSED
            raise SessionTimeoutError(f"session {session.session_id} timed out")

    def verify_thumb(self, session: VotingSession, probe: GrayImage) -> bool:
        """Fingerprint lookup; identifies the voter or closes the session."""
        self._check_timeout(session)
        if session.state != IDLE:
            raise WrongStateError(f"verify_thumb requires an Idle session, not {session.state}")
        hit = self.registry.lookup_by_fingerprint(probe)
        if hit is None:
            session.state = CLOSED
            self._audit(THUMB_REJECTED, f"session {session.session_id}: no fingerprint match")
            return False
        record, similarity = hit
        session.state = THUMB_VERIFIED
        session.voter_no = record.voter_no
        session.similarity = similarity
        return True

    def verify_face(self, session: VotingSession, probe: GrayImage) -> bool:
        """Cascaded face check; must agree with the thumb-identified voter."""
        self._check_timeout(session)
        if session.state != THUMB_VERIFIED:
            raise WrongStateError(
                f"verify_face requires a ThumbVerified session, not {session.state}"
            )
        result = self.registry.verify_face(probe)
        session.similarity = result.similarity
        if not result.accepted or result.candidate != str(session.voter_no):
            session.state = CLOSED
            reason = (
                "similarity below threshold"
                if not result.accepted
                else "face identifies a different voter"
            )
            self._audit(FACE_REJECTED, f"session {session.session_id}: {reason}")
            return False
        session.state = FULLY_VERIFIED
        return True

    def cast_vote(self, session: VotingSession, candidate_id: str) -> VoteReceipt:
        self._check_timeout(session)
        if session.state != FULLY_VERIFIED:
            raise NotVerifiedError(
                f"cast_vote requires a FullyVerified session, not {session.state}"
            )
        if candidate_id not in self._counts:
            raise UnknownCandidateError(f"unknown candidate {candidate_id!r}")
        with self._lock:
            if not self.registry.mark_voted(session.voter_no):
                session.state = CLOSED
                self._audit(
                    DOUBLE_VOTE_ATTEMPT,
                    f"session {session.session_id}: voter {session.voter_no} has already voted",
                )
                raise AlreadyVotedError(f"voter {session.voter_no} has already voted")
            self._counts[candidate_id] += 1
            receipt = VoteReceipt(session.session_id, candidate_id, float(self._clock()))
            self._receipts.append(receipt)
            session.state = CLOSED
        self._audit(VOTE_CAST, f"session {session.session_id}: ballot recorded")
        return receipt

    # -- results -----------------------------------------------------------

    def tally(self) -> tuple[dict[str, int], int]:
        """Candidate counts plus turnout (= sum of counts = voters marked
        as having voted)."""
        with self._lock:
            return dict(self._counts), sum(self._counts.values())

    @property
    def receipts(self) -> list[VoteReceipt]:
        with self._lock:
            return list(self._receipts)

    def save_tally(self, path) -> None:
        counts, turnout = self.tally()
        Path(path).write_text(json.dumps({"counts": counts, "turnout": turnout}, indent=1))


def load_tally_counts(path) -> dict:
    p = Path(path)
    if not p.exists():
        return {}
    return json.loads(p.read_text()).get("counts", {})
