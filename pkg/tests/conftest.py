import numpy as np
import pytest

from ballotgate import facerec, imaging, synth
from ballotgate.registry import Registry

TEST_KEY = bytes(range(1, 17))
CROP_SIDE = 42


def face_vector(img, side=CROP_SIDE):
    return imaging.extract_window(img, imaging.full_rect(img), side).pixels.ravel()


@pytest.fixture(scope="session")
def pool_model():
    """Eigen model fitted on a disjoint identity pool, shared by tests."""
    vecs = [face_vector(img) for img in synth.synth_face_pool(25)]
    return facerec.fit_eigenmodel(vecs, m=20)


@pytest.fixture(scope="session")
def face_images():
    """Identity -> four face images, identities 0..7."""
    return {i: [synth.synth_face(i, v) for v in range(4)] for i in range(8)}


@pytest.fixture(scope="session")
def fp_images():
    """Identity -> three fingerprint impressions, identities 0..7."""
    return {i: [synth.synth_fingerprint(i, v) for v in range(3)] for i in range(8)}


@pytest.fixture(scope="session")
def fp_templates(fp_images):
    from ballotgate import fingerprint

    return {
        ident: [fingerprint.extract_template(img) for img in imgs]
        for ident, imgs in fp_images.items()
    }


@pytest.fixture
def registry(pool_model):
    return Registry(pool_model, key=TEST_KEY)


def make_ballot():
    from ballotgate.election import Ballot, Candidate

    return Ballot(
        "test-election",
        (Candidate("alpha", "Alpha"), Candidate("beta", "Beta"), Candidate("gamma", "Gamma")),
    )


@pytest.fixture
def ballot():
    return make_ballot()
