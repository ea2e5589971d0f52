import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedehr.model import (
    EhrType,
    UnifiedEhr,
    ValidationError,
    canonical_serialize,
    hash_patient_id,
    normalize_raw_id,
    parse_rfc3339,
    validate_unified,
)

from conftest import TEST_KEY

# Frozen from an independent HMAC-SHA-256 implementation (openssl dgst
# -mac HMAC) over the normalized id "M1234567" with TEST_KEY.
GOLDEN_DIGEST = "1449af29ce528fa17d5fa70c32800fdf6b0a6b2f000a691e2ccc22d61be50f2e"


def make_record(**overrides) -> UnifiedEhr:
    base = dict(
        hospital_id="HC",
        ehr_id="0221",
        patient_id=GOLDEN_DIGEST,
        patient_name="Yang Yingying",
        doctor_name="Dr. Chan",
        ehr_type=EhrType.HEMODIALYSIS,
        recorded_at="2015-09-30T10:30:00+08:00",
        language="zh",
        payload={
            "pre_weight_kg": 62.4,
            "post_weight_kg": 60.1,
            "systolic_mmHg": 128,
            "diastolic_mmHg": 82,
            "duration_min": 240,
            "dialyzer_model": "FX-80",
            "notes": "uneventful session",
        },
        shared=True,
    )
    base.update(overrides)
    return UnifiedEhr(**base)


class TestHashPatientId:
    def test_golden_vector(self):
        assert hash_patient_id("M1234567", TEST_KEY) == GOLDEN_DIGEST

    def test_deterministic(self):
        assert hash_patient_id("M7654321", TEST_KEY) == hash_patient_id("M7654321", TEST_KEY)

    def test_normalization_idempotent(self):
        assert hash_patient_id(" m123456-7 ", TEST_KEY) == hash_patient_id("M1234567", TEST_KEY)

    def test_empty_raw_id_rejected(self):
        with pytest.raises(ValidationError):
            hash_patient_id("", TEST_KEY)
        with pytest.raises(ValidationError):
            hash_patient_id("   ", TEST_KEY)

    def test_short_key_rejected(self):
        with pytest.raises(ValidationError):
            hash_patient_id("M1234567", b"short")

    def test_key_separation(self):
        other_key = bytes(reversed(TEST_KEY))
        distinct = sum(
            hash_patient_id(f"M{1000000 + i}", TEST_KEY)
            != hash_patient_id(f"M{1000000 + i}", other_key)
            for i in range(100)
        )
        assert distinct == 100

    def test_no_collisions_at_fixture_scale(self):
        digests = {hash_patient_id(f"M{i:07d}", TEST_KEY) for i in range(10_000)}
        assert len(digests) == 10_000

    @given(raw=st.text(min_size=1).filter(lambda s: s.strip()))
    @settings(max_examples=200)
    def test_pure_function(self, raw):
        assert hash_patient_id(raw, TEST_KEY) == hash_patient_id(raw, TEST_KEY)
        assert hash_patient_id(raw, TEST_KEY) == hash_patient_id(normalize_raw_id(raw), TEST_KEY)


class TestEhrType:
    @pytest.mark.parametrize(
        "value",
        ["hemodialysis", "lab_report", "radiology_image", "transcription_report", "medication_history"],
    )
    def test_known_values(self, value):
        assert EhrType.parse(value).value == value

    def test_unknown_rejected(self):
        with pytest.raises(ValidationError):
            EhrType.parse("dental")

    def test_exactly_five(self):
        assert len(EhrType) == 5


class TestValidateUnified:
    def test_well_formed_ok(self):
        assert validate_unified(make_record()).ok

    def test_impossible_date(self):
        report = validate_unified(make_record(recorded_at="2015-13-40"))
        assert any(field == "recorded_at" for field, _ in report.errors)

    def test_legacy_field_names_rejected_on_parse(self):
        # A document still using the HC legacy name card_id has no
        # patient_id and must not parse as unified.
        doc = make_record().to_dict()
        doc["card_id"] = doc.pop("patient_id")
        with pytest.raises(ValidationError, match="patient_id"):
            UnifiedEhr.from_dict(doc)

    def test_bad_digest(self):
        report = validate_unified(make_record(patient_id="M1234567"))
        assert any(field == "patient_id" for field, _ in report.errors)

    def test_payload_plausibility_bound(self):
        payload = dict(make_record().payload)
        payload["post_weight_kg"] = payload["pre_weight_kg"] + 1.0
        report = validate_unified(make_record(payload=payload))
        assert any(field == "payload" for field, _ in report.errors)


class TestCanonicalSerialize:
    def test_stable(self):
        record = make_record()
        assert canonical_serialize(record) == canonical_serialize(record)

    def test_fieldwise_equal_records_equal_bytes(self):
        assert canonical_serialize(make_record()) == canonical_serialize(make_record())

    def test_input_field_order_irrelevant(self):
        doc = make_record().to_dict()
        reordered = {key: doc[key] for key in reversed(list(doc))}
        r1 = UnifiedEhr.from_dict(json.loads(json.dumps(doc)))
        r2 = UnifiedEhr.from_dict(json.loads(json.dumps(reordered)))
        assert canonical_serialize(r1) == canonical_serialize(r2)

    def test_sorted_keys_no_whitespace(self):
        doc = json.loads(canonical_serialize(make_record()))
        assert list(doc) == sorted(doc)
        assert b": " not in canonical_serialize(make_record())

    def test_invalid_record_rejected(self):
        with pytest.raises(ValidationError):
            canonical_serialize(make_record(recorded_at="yesterday"))

    def test_injective_on_fixture_corpus(self):
        blobs = {
            canonical_serialize(make_record(ehr_id=f"{i:04d}", recorded_at=f"2015-09-{(i % 28) + 1:02d}T10:00:00+08:00"))
            for i in range(200)
        }
        assert len(blobs) == 200


class TestRfc3339:
    def test_zulu_and_offset(self):
        assert parse_rfc3339("2015-09-30T02:30:00Z") == parse_rfc3339("2015-09-30T10:30:00+08:00")

    @pytest.mark.parametrize("bad", ["2015-09-30", "2015-09-30T10:30:00", "nonsense", ""])
    def test_rejects_non_rfc3339(self, bad):
        with pytest.raises(ValidationError):
            parse_rfc3339(bad)
