"""Runtime configuration for the service, CLI and evaluation harness.

All of the system's free parameters live here with their defaults:
acceptance thresholds 0.90 for both biometrics, k = 1 neighbors,
1764-dimensional face vectors (42x42 crops), m = 40 eigen components,
q_max = 3 subspace directions, 10 px / 15 degree fingerprint tolerances
and a 120 s session timeout. A JSON config file mirrors the field names.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


@dataclass
class ApiConfig:
    host: str = "127.0.0.1"
    port: int = 8400
    registry_path: str = "registry.jsonl"
    ballot_path: str = "ballot.json"
    model_path: str = "eigenmodel.json"
    tally_path: str = "tally.json"
    cascade_path: str | None = None
    audit_path: str | None = None
    pre_cropped: bool = True
    face_threshold: float = 0.90
    fp_threshold: float = 0.90
    k: int = 1
    m: int = 40
    d: int = 1764
    q_max: int = 3
    r_tol: float = 10.0
    theta_tol: float = 15.0
    session_timeout_s: float = 120.0

    def __post_init__(self):
        if not 0.0 <= self.face_threshold <= 1.0:
            raise ValueError("face_threshold must be in [0, 1]")
        if not 0.0 <= self.fp_threshold <= 1.0:
            raise ValueError("fp_threshold must be in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.crop_side ** 2 != self.d:
            raise ValueError(f"d must be a perfect square (got {self.d})")

    @property
    def crop_side(self) -> int:
        return math.isqrt(self.d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def config_from_dict(doc: dict) -> ApiConfig:
    known = {f.name for f in fields(ApiConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return ApiConfig(**doc)


def load_config(path) -> ApiConfig:
    return config_from_dict(json.loads(Path(path).read_text()))
