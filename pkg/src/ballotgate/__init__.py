"""Dual-factor biometric voting toolkit.

Face recognition (Haar-cascade detection, eigenface projection, a
KNN-then-subspace cascaded verifier) and minutiae fingerprint matching
gate voter enrollment and ballot casting; an HTTP gateway, operator CLI
and evaluation harness sit on top.
"""

from .bench import TimingPoint, bench_response
from .config import ApiConfig, load_config
from .detector import (
    Cascade,
    CascadeStage,
    Detection,
    HaarFeature,
    WeakClassifier,
    detect_faces,
    enumerate_features,
    eval_feature,
    train_adaboost,
    train_cascade,
)
from .election import AuditEvent, Ballot, Candidate, Election, VoteReceipt, VotingSession
from .evaluate import EvalReport, compare_classifiers, eval_face, eval_fingerprint
from .facerec import (
    EigenModel,
    FaceTemplate,
    IdentitySubspace,
    VerifyResult,
    cascaded_verify,
    fit_eigenmodel,
    fit_identity_subspaces,
    knn_classify,
    project,
    subspace_similarity,
)
from .fingerprint import (
    BinaryImage,
    FingerprintTemplate,
    MatchResult,
    Minutia,
    binarize,
    extract_minutiae,
    extract_template,
    match_templates,
    thin,
    verify_fingerprint,
)
from .imaging import (
    GrayImage,
    IntegralImage,
    Rect,
    extract_window,
    integral_image,
    normalize,
    read_image,
    rect_sum,
    resize,
    to_grayscale,
    write_pgm,
)
from .registry import (
    BlankFingerprintError,
    DuplicateEnrollmentError,
    FaceNotFoundError,
    Registry,
    VoterRecord,
    encrypt_id,
)

__version__ = "0.1.0"
