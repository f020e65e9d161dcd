import numpy as np
import pytest

from ballotgate import facerec, fingerprint, synth
from ballotgate.imaging import GrayImage
from ballotgate.registry import (
    BlankFingerprintError,
    DuplicateEnrollmentError,
    Registry,
    RegistryCorruptError,
    RegistryError,
    encrypt_id,
    load_secret_key,
)

from conftest import TEST_KEY


class TestEncryptId:
    def test_deterministic(self):
        assert encrypt_id(1, TEST_KEY) == encrypt_id(1, TEST_KEY)

    def test_format(self):
        out = encrypt_id(7, TEST_KEY)
        assert len(out) == 32
        int(out, 16)  # valid hex

    def test_ten_thousand_distinct(self):
        ids = {encrypt_id(c, TEST_KEY) for c in range(1, 10001)}
        assert len(ids) == 10000

    def test_key_sensitivity(self):
        assert encrypt_id(1, b"key-one") != encrypt_id(1, b"key-two")

    def test_counter_not_echoed(self):
        for counter in (1, 2, 7, 12, 123, 4096):
            assert str(counter) not in encrypt_id(counter, TEST_KEY)

    def test_empty_key(self):
        with pytest.raises(ValueError):
            encrypt_id(1, b"")


class TestSecretKey:
    def test_reads_hex_from_env(self):
        assert load_secret_key({"BALLOTGATE_SECRET": "00ff"}) == b"\x00\xff"

    def test_missing(self):
        with pytest.raises(RegistryError):
            load_secret_key({})

    def test_not_hex(self):
        with pytest.raises(RegistryError):
            load_secret_key({"BALLOTGATE_SECRET": "zz"})


class TestEnroll:
    def test_first_enrollment_gets_voter_one(self, registry, face_images, fp_images):
        encrypted = registry.enroll(face_images[0][0], fp_images[0][0])
        assert len(registry.records) == 1
        rec = registry.records[0]
        assert rec.voter_no == 1
        assert rec.encrypted_id == encrypted
        assert rec.has_voted is False
        assert rec.face_template.identity == "1"

    def test_reenrollment_rejected_with_voter_number(self, registry, face_images, fp_images):
        registry.enroll(face_images[0][0], fp_images[0][0])
        with pytest.raises(DuplicateEnrollmentError) as err:
            registry.enroll(face_images[0][1], fp_images[0][1])
        assert err.value.voter_no == 1
        assert err.value.modality in ("face", "fingerprint")
        assert len(registry.records) == 1

    def test_rejected_attempt_consumes_no_counter(self, registry, face_images, fp_images):
        registry.enroll(face_images[0][0], fp_images[0][0])
        with pytest.raises(DuplicateEnrollmentError):
            registry.enroll(face_images[0][1], fp_images[0][1])
        registry.enroll(face_images[1][0], fp_images[1][0])
        assert [r.voter_no for r in registry.records] == [1, 2]
        assert registry.next_counter == 3

    def test_same_face_different_finger_still_duplicate(self, registry, face_images, fp_images):
        registry.enroll(face_images[0][0], fp_images[0][0])
        with pytest.raises(DuplicateEnrollmentError) as err:
            registry.enroll(face_images[0][1], fp_images[5][0])
        assert err.value.modality == "face"

    def test_same_finger_different_face_still_duplicate(self, registry, face_images, fp_images):
        registry.enroll(face_images[0][0], fp_images[0][0])
        with pytest.raises(DuplicateEnrollmentError) as err:
            registry.enroll(face_images[5][0], fp_images[0][1])
        assert err.value.modality == "fingerprint"

    def test_distinct_people_get_distinct_ids(self, registry, face_images, fp_images):
        ids = [
            registry.enroll(face_images[i][0], fp_images[i][0]) for i in range(4)
        ]
        assert len(set(ids)) == 4
        assert [r.voter_no for r in registry.records] == [1, 2, 3, 4]

    def test_blank_fingerprint(self, registry, face_images):
        blank = GrayImage(np.full((160, 160), 210, dtype=np.uint8))
        with pytest.raises(BlankFingerprintError):
            registry.enroll(face_images[0][0], blank)
        assert registry.records == []

    def test_dedup_invariant_pairwise(self, registry, face_images, fp_images):
        for i in range(5):
            registry.enroll(face_images[i][0], fp_images[i][0])
        for a in registry.records:
            for b in registry.records:
                if a.voter_no == b.voter_no:
                    continue
                face_sim = facerec.subspace_similarity(
                    a.face_template.coords, registry.subspaces[b.face_template.identity]
                )
                fp_sim = fingerprint.match_templates(a.fp_template, b.fp_template).similarity
                assert face_sim < 0.90
                assert fp_sim < 0.90

    def test_enroll_requires_model(self, face_images, fp_images):
        reg = Registry(None, key=TEST_KEY)
        with pytest.raises(RegistryError, match="model"):
            reg.enroll(face_images[0][0], fp_images[0][0])


class TestDetectionMode:
    def test_face_not_found_when_detector_rejects(self, pool_model, fp_images):
        from ballotgate.detector import Cascade
        from ballotgate.registry import FaceNotFoundError

        # a cascade with an impossible stage threshold rejects every window
        from ballotgate.detector import CascadeStage, WeakClassifier, HaarFeature
        from ballotgate.imaging import Rect

        lr = WeakClassifier(HaarFeature("two_rect_h", Rect(0, 0, 2, 1)), 0.0, 1, 1.0)
        never = Cascade(24, (CascadeStage((lr,), 99.0),))
        reg = Registry(pool_model, key=TEST_KEY, cascade=never, pre_cropped=False)
        with pytest.raises(FaceNotFoundError):
            reg.enroll(synth.synth_face(0, 0), fp_images[0][0])


class TestLookup:
    def test_lookup_enrolled_print(self, registry, face_images, fp_images):
        for i in range(3):
            registry.enroll(face_images[i][0], fp_images[i][0])
        hit = registry.lookup_by_fingerprint(fp_images[1][1])
        assert hit is not None
        record, similarity = hit
        assert record.voter_no == 2
        assert similarity >= 0.9

    def test_unknown_print_not_found(self, registry, face_images, fp_images):
        registry.enroll(face_images[0][0], fp_images[0][0])
        assert registry.lookup_by_fingerprint(fp_images[6][0]) is None

    def test_empty_store_not_found(self, registry, fp_images):
        assert registry.lookup_by_fingerprint(fp_images[0][0]) is None

    def test_best_of_multiple_records_wins(self, registry, face_images, fp_images):
        for i in range(3):
            registry.enroll(face_images[i][0], fp_images[i][0])
        record, similarity = registry.lookup_by_fingerprint(fp_images[2][2])
        assert record.voter_no == 3
        assert similarity == max(
            fingerprint.match_templates(
                fingerprint.extract_template(fp_images[2][2]), r.fp_template
            ).similarity
            for r in registry.records
        )


class TestPersistence:
    def test_empty_store_round_trip(self, pool_model, tmp_path):
        reg = Registry(pool_model, key=TEST_KEY)
        path = tmp_path / "store.jsonl"
        reg.save(path)
        back = Registry.load(path, model=pool_model, key=TEST_KEY)
        assert back.records == []
        assert back.next_counter == 1

    def test_three_record_round_trip(self, registry, face_images, fp_images, tmp_path):
        for i in range(3):
            registry.enroll(face_images[i][0], fp_images[i][0])
        registry.records[1].has_voted = True
        path = tmp_path / "store.jsonl"
        registry.save(path)
        back = Registry.load(path, model=registry.model, key=TEST_KEY)
        assert back.records == registry.records
        assert back.next_counter == registry.next_counter

    def test_round_trip_preserves_real_values_exactly(
        self, registry, face_images, fp_images, tmp_path
    ):
        registry.enroll(face_images[0][0], fp_images[0][0])
        path = tmp_path / "store.jsonl"
        registry.save(path)
        back = Registry.load(path, model=registry.model, key=TEST_KEY)
        a, b = registry.records[0], back.records[0]
        assert np.array_equal(a.face_template.coords, b.face_template.coords)
        assert a.fp_template.minutiae == b.fp_template.minutiae
        assert a.enrolled_at == b.enrolled_at

    def test_truncated_file_names_bad_record(self, registry, face_images, fp_images, tmp_path):
        for i in range(2):
            registry.enroll(face_images[i][0], fp_images[i][0])
        path = tmp_path / "store.jsonl"
        registry.save(path)
        text = path.read_text()
        path.write_text(text[: len(text) - 40])  # clip inside the last record
        with pytest.raises(RegistryCorruptError) as err:
            Registry.load(path, model=registry.model, key=TEST_KEY)
        assert err.value.record_index == 1

    def test_bad_header(self, tmp_path):
        path = tmp_path / "store.jsonl"
        path.write_text("not json\n")
        with pytest.raises(RegistryCorruptError):
            Registry.load(path)

    def test_atomic_write_leaves_no_temp_files(self, registry, face_images, fp_images, tmp_path):
        registry.enroll(face_images[0][0], fp_images[0][0])
        path = tmp_path / "store.jsonl"
        registry.save(path)
        registry.save(path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["store.jsonl"]

    def test_subspaces_rebuilt_on_load(self, registry, face_images, fp_images, tmp_path):
        for i in range(2):
            registry.enroll(face_images[i][0], fp_images[i][0])
        path = tmp_path / "store.jsonl"
        registry.save(path)
        back = Registry.load(path, model=registry.model, key=TEST_KEY)
        result = back.verify_face(face_images[1][1])
        assert result.accepted and result.candidate == "2"


class TestMarkVoted:
    def test_check_and_set_atomicity(self, registry, face_images, fp_images):
        registry.enroll(face_images[0][0], fp_images[0][0])
        assert registry.mark_voted(1) is True
        assert registry.mark_voted(1) is False
        assert registry.voted_count() == 1
