"""Operator command line.

Subcommands: enroll, verify, vote, tally, serve, train-cascade,
fit-model, eval-face, eval-fingerprint, bench, compare. Exit codes:
0 success, 1 rejection (duplicate, failed verification, blocked vote),
2 usage error (bad flags, missing files).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from . import detector, evaluate, facerec
from .api import build_components, create_app, serve
from .config import ApiConfig, load_config
from .election import (
    AlreadyVotedError,
    Election,
    ElectionError,
    load_ballot,
    load_tally_counts,
)
from .evaluate import FACE_COLUMNS, FINGERPRINT_COLUMNS, format_report
from .imaging import read_image
from .registry import DuplicateEnrollmentError, Registry, RegistryError

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _config_from(args) -> ApiConfig:
    config = load_config(_existing(args.config, "config file")) if args.config else ApiConfig()
    for flag, attr in (
        ("store", "registry_path"),
        ("model", "model_path"),
        ("ballot", "ballot_path"),
        ("audit", "audit_path"),
        ("tally_file", "tally_path"),
    ):
        value = getattr(args, flag, None)
        if value:
            setattr(config, attr, value)
    if getattr(args, "port", None):
        config.port = args.port
    return config


def _open_registry(config: ApiConfig, need_model: bool = True) -> Registry:
    model = None
    if need_model:
        model_path = _existing(config.model_path, "eigen model")
        model = facerec.load_model(model_path)
    params = dict(
        face_threshold=config.face_threshold,
        fp_threshold=config.fp_threshold,
        q_max=config.q_max,
        k=config.k,
        r_tol=config.r_tol,
        theta_tol=config.theta_tol,
        pre_cropped=config.pre_cropped,
    )
    if Path(config.registry_path).exists():
        return Registry.load(config.registry_path, model=model, **params)
    return Registry(model, **params)


# -- subcommands ---------------------------------------------------------------

def cmd_enroll(args) -> int:
    config = _config_from(args)
    reg = _open_registry(config)
    face_img = read_image(_existing(args.face, "face image"))
    fp_img = read_image(_existing(args.fingerprint, "fingerprint image"))
    try:
        encrypted_id = reg.enroll(face_img, fp_img)
    except DuplicateEnrollmentError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    reg.save(config.registry_path)
    print(f"enrolled: {encrypted_id}")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = _config_from(args)
    reg = _open_registry(config)
    thumb = read_image(_existing(args.thumb, "thumb image"))
    hit = reg.lookup_by_fingerprint(thumb)
    if hit is None:
        print("thumb: no match", file=sys.stderr)
        return EXIT_REJECTED
    record, similarity = hit
    print(f"thumb: voter {record.voter_no} (similarity {similarity:.3f})")
    if args.face:
        face_img = read_image(_existing(args.face, "face image"))
        result = reg.verify_face(face_img)
        same = result.candidate == str(record.voter_no)
        print(f"face: candidate {result.candidate} similarity {result.similarity:.3f}")
        if not (result.accepted and same):
            print("face: rejected", file=sys.stderr)
            return EXIT_REJECTED
        print("verified")
    return EXIT_OK


def cmd_vote(args) -> int:
    config = _config_from(args)
    reg = _open_registry(config)
    ballot = load_ballot(_existing(config.ballot_path, "ballot file"))
    election = Election(
        reg,
        ballot,
        audit_path=config.audit_path,
        session_timeout_s=config.session_timeout_s,
        initial_counts=load_tally_counts(config.tally_path),
    )
    session = election.new_session()

    print("Please place the thumb on the scanner...")
    thumb = read_image(_existing(args.thumb, "thumb image"))
    if not election.verify_thumb(session, thumb):
        print("rejected: fingerprint not recognized", file=sys.stderr)
        return EXIT_REJECTED
    print(f"thumb accepted (similarity {session.similarity:.3f})")

    print("Please place the face in front of the camera...")
    face_img = read_image(_existing(args.face, "face image"))
    if not election.verify_face(session, face_img):
        print("rejected: face verification failed", file=sys.stderr)
        return EXIT_REJECTED
    print(f"face accepted (similarity {session.similarity:.3f})")

    try:
        receipt = election.cast_vote(session, args.candidate)
    except AlreadyVotedError as exc:
        reg.save(config.registry_path)
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except ElectionError as exc:
        raise UsageError(str(exc)) from exc
    reg.save(config.registry_path)
    election.save_tally(config.tally_path)
    print(f"vote cast for {receipt.candidate_id} at {receipt.cast_at:.0f} (session {receipt.session_id})")
    return EXIT_OK


def cmd_tally(args) -> int:
    config = _config_from(args)
    ballot = load_ballot(_existing(config.ballot_path, "ballot file"))
    counts = {c.id: 0 for c in ballot.candidates}
    counts.update(load_tally_counts(config.tally_path))
    print(f"{ballot.election_name}")
    for cand in ballot.candidates:
        print(f"  {cand.id:12s} {cand.name:24s} {counts[cand.id]:6d}")
    print(f"turnout: {sum(counts.values())}")
    return EXIT_OK


def cmd_serve(args) -> int:
    config = _config_from(args)
    _existing(config.model_path, "eigen model")
    _existing(config.ballot_path, "ballot file")
    serve(config)
    return EXIT_OK


def cmd_fit_model(args) -> int:
    config = _config_from(args)
    images = evaluate.load_all_images(_existing(args.dataset, "dataset directory"))
    side = config.crop_side
    vectors = [
        evaluate._face_vector(img, side) for imgs in images.values() for img in imgs
    ]
    model = facerec.fit_eigenmodel(vectors, m=args.components or config.m)
    facerec.save_model(model, args.out)
    print(f"fitted eigen model: d={model.d} m={model.m} -> {args.out}")
    return EXIT_OK


def cmd_train_cascade(args) -> int:
    faces_dir = _existing(args.faces, "faces directory")
    nonfaces_dir = _existing(args.nonfaces, "non-faces directory")
    side = args.window_side
    from .imaging import extract_window, full_rect

    def windows(folder):
        paths = sorted(p for p in Path(folder).iterdir() if p.suffix in (".pgm", ".png"))
        return [extract_window(read_image(p), full_rect(read_image(p)), side) for p in paths]

    faces = windows(faces_dir)
    nonfaces = windows(nonfaces_dir)
    if not faces or not nonfaces:
        raise UsageError("need at least one face and one non-face image")
    stage_sizes = tuple(int(s) for s in args.stage_sizes.split(","))
    cascade = detector.train_cascade(
        faces + nonfaces,
        [1] * len(faces) + [-1] * len(nonfaces),
        stage_sizes=stage_sizes,
        window_side=side,
    )
    detector.save_cascade(cascade, args.out)
    print(f"trained cascade: {len(cascade.stages)} stages -> {args.out}")
    return EXIT_OK


def cmd_eval_face(args) -> int:
    config = _config_from(args)
    report = evaluate.eval_face(_existing(args.dataset, "dataset directory"), config)
    print(format_report(report, FACE_COLUMNS))
    return EXIT_OK


def cmd_eval_fingerprint(args) -> int:
    config = _config_from(args)
    report = evaluate.eval_fingerprint(_existing(args.dataset, "dataset directory"), config)
    print(format_report(report, FINGERPRINT_COLUMNS))
    return EXIT_OK


def cmd_bench(args) -> int:
    dims = [int(d) for d in args.dimensions.split(",")]
    try:
        points = bench_mod.bench_response(dims, trials=args.trials)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    csv = bench_mod.timing_csv(points)
    if args.out:
        Path(args.out).write_text(csv)
    print(csv, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _config_from(args)
    k_values = [int(k) for k in args.k.split(",")]
    rows = evaluate.compare_classifiers(
        _existing(args.dataset, "dataset directory"), k_values, config
    )
    csv = evaluate.comparison_csv(rows)
    if args.out:
        Path(args.out).write_text(csv)
    print(csv, end="")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ballotgate", description="dual-factor biometric voting toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--store", help="registry store path")
        p.add_argument("--model", help="eigen model path")
        p.add_argument("--ballot", help="ballot definition path")
        p.add_argument("--audit", help="audit log path")
        p.add_argument("--tally-file", help="persisted tally counts path")

    p = sub.add_parser("enroll", help="register a voter from image files")
    common(p)
    p.add_argument("--face", required=True)
    p.add_argument("--fingerprint", required=True)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", help="one-off identity check")
    common(p)
    p.add_argument("--thumb", required=True)
    p.add_argument("--face")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("vote", help="run the thumb/face/cast sequence")
    common(p)
    p.add_argument("--thumb", required=True)
    p.add_argument("--face", required=True)
    p.add_argument("--candidate", required=True)
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("tally", help="print candidate counts and turnout")
    common(p)
    p.set_defaults(func=cmd_tally)

    p = sub.add_parser("serve", help="run the HTTP service")
    common(p)
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fit-model", help="fit the eigen model from a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int)
    p.set_defaults(func=cmd_fit_model)

    p = sub.add_parser("train-cascade", help="train a detection cascade")
    p.add_argument("--faces", required=True)
    p.add_argument("--nonfaces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-side", type=int, default=24)
    p.add_argument("--stage-sizes", default="10,25")
    p.set_defaults(func=cmd_train_cascade)

    p = sub.add_parser("eval-face", help="facial accuracy report")
    common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval_face)

    p = sub.add_parser("eval-fingerprint", help="fingerprint accuracy report")
    common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval_fingerprint)

    p = sub.add_parser("bench", help="verification response-time benchmark")
    p.add_argument("--dimensions", default="196,784,1764")
    p.add_argument("--trials", type=int, default=9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="plain KNN vs cascaded verifier accuracy")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", default="1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except RegistryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
