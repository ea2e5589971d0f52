import random
from datetime import datetime, timedelta, timezone

import pytest

from conftest import TEST_KEY
from fedehr.model import ValidationError, hash_patient_id
from fedehr.tokens import (
    CONSENT_TOKEN_TTL,
    KIND_CONSENT,
    KIND_DOCTOR,
    AuthenticationError,
    Credential,
    CredentialStore,
    TokenError,
    doctor_login,
    grant_consent,
    issue_consent_token,
    issue_doctor_token,
    verify_token,
)

NOW = datetime(2016, 5, 1, 9, 0, tzinfo=timezone.utc)
HC_KEY = b"hc-signing-key-hc-signing-key-32"
KW_KEY = b"kw-signing-key-kw-signing-key-32"
KEY_MAP = {"HC": HC_KEY, "KW": KW_KEY}


@pytest.fixture
def credentials() -> CredentialStore:
    return CredentialStore(
        {
            "dr.chan": Credential("dr.chan", CredentialStore.hash_secret("chan-secret"), "doctor"),
            "auditor": Credential("auditor", CredentialStore.hash_secret("audit-secret"), "admin"),
        }
    )


class TestDoctorLogin:
    def test_valid_credentials(self, credentials):
        token = doctor_login(credentials, "dr.chan", "chan-secret", "HC", HC_KEY, NOW)
        claims = verify_token(token, KIND_DOCTOR, KEY_MAP, NOW)
        assert claims["sub"] == "dr.chan"
        assert claims["role"] == "doctor"
        assert claims["hospital_id"] == "HC"

    def test_wrong_secret(self, credentials):
        with pytest.raises(AuthenticationError):
            doctor_login(credentials, "dr.chan", "wrong", "HC", HC_KEY, NOW)

    def test_unknown_doctor(self, credentials):
        with pytest.raises(AuthenticationError):
            doctor_login(credentials, "dr.nobody", "chan-secret", "HC", HC_KEY, NOW)

    def test_admin_role_from_credential_record(self, credentials):
        token = doctor_login(credentials, "auditor", "audit-secret", "HC", HC_KEY, NOW)
        assert verify_token(token, KIND_DOCTOR, KEY_MAP, NOW)["role"] == "admin"

    def test_token_valid_until_expiry(self, credentials):
        token = doctor_login(credentials, "dr.chan", "chan-secret", "HC", HC_KEY, NOW)
        verify_token(token, KIND_DOCTOR, KEY_MAP, NOW + timedelta(hours=7, minutes=59))
        with pytest.raises(TokenError) as err:
            verify_token(token, KIND_DOCTOR, KEY_MAP, NOW + timedelta(hours=8, seconds=1))
        assert err.value.reason == "expired"


class TestGrantConsent:
    def doctor_claims(self):
        return {"sub": "dr.chan", "role": "doctor", "hospital_id": "HC"}

    def test_patient_ref_matches_core_digest(self):
        token = grant_consent(
            scan="M1234567",
            doctor_claims=self.doctor_claims(),
            scope_from="2010-01-01T00:00:00+08:00",
            scope_to="2016-12-31T23:59:59+08:00",
            scope_types=["hemodialysis"],
            federation_key=TEST_KEY,
            hospital_id="HC",
            signing_key=HC_KEY,
            now=NOW,
        )
        claims = verify_token(token, KIND_CONSENT, KEY_MAP, NOW)
        assert claims["patient_ref"] == hash_patient_id("M1234567", TEST_KEY)
        assert claims["granted_to"] == "dr.chan"

    def test_empty_scan_rejected(self):
        with pytest.raises(ValidationError):
            grant_consent(
                scan="  ",
                doctor_claims=self.doctor_claims(),
                scope_from="2010-01-01T00:00:00+08:00",
                scope_to="2016-12-31T23:59:59+08:00",
                scope_types=[],
                federation_key=TEST_KEY,
                hospital_id="HC",
                signing_key=HC_KEY,
                now=NOW,
            )

    def test_expires_after_fifteen_minutes(self):
        token = issue_consent_token(
            hash_patient_id("M1234567", TEST_KEY),
            "dr.chan",
            "2010-01-01T00:00:00+08:00",
            "2016-12-31T23:59:59+08:00",
            ["hemodialysis"],
            "HC",
            HC_KEY,
            NOW,
        )
        verify_token(token, KIND_CONSENT, KEY_MAP, NOW + timedelta(minutes=14))
        with pytest.raises(TokenError) as err:
            verify_token(token, KIND_CONSENT, KEY_MAP, NOW + CONSENT_TOKEN_TTL)
        assert err.value.reason == "expired"

    def test_lifetime_cap_enforced(self):
        with pytest.raises(ValidationError):
            issue_consent_token(
                hash_patient_id("M1234567", TEST_KEY),
                "dr.chan",
                "2010-01-01T00:00:00+08:00",
                "2016-12-31T23:59:59+08:00",
                [],
                "HC",
                HC_KEY,
                NOW,
                ttl=timedelta(hours=1),
            )

    def test_unknown_scope_type_rejected(self):
        with pytest.raises(ValidationError):
            issue_consent_token(
                hash_patient_id("M1234567", TEST_KEY),
                "dr.chan",
                "2010-01-01T00:00:00+08:00",
                "2016-12-31T23:59:59+08:00",
                ["dental"],
                "HC",
                HC_KEY,
                NOW,
            )


class TestVerifyToken:
    def fresh_doctor_token(self) -> str:
        return issue_doctor_token("dr.chan", "doctor", "HC", HC_KEY, NOW)

    def test_fresh_token_verifies(self):
        claims = verify_token(self.fresh_doctor_token(), KIND_DOCTOR, KEY_MAP, NOW)
        assert claims["sub"] == "dr.chan"

    def test_wrong_kind(self):
        with pytest.raises(TokenError) as err:
            verify_token(self.fresh_doctor_token(), KIND_CONSENT, KEY_MAP, NOW)
        assert err.value.reason == "wrong_kind"

    def test_unknown_issuer(self):
        token = issue_doctor_token("dr.x", "doctor", "XX", HC_KEY, NOW)
        with pytest.raises(TokenError) as err:
            verify_token(token, KIND_DOCTOR, KEY_MAP, NOW)
        assert err.value.reason == "bad_signature"

    def test_signed_with_wrong_key(self):
        token = issue_doctor_token("dr.chan", "doctor", "HC", KW_KEY, NOW)
        with pytest.raises(TokenError) as err:
            verify_token(token, KIND_DOCTOR, KEY_MAP, NOW)
        assert err.value.reason == "bad_signature"

    def test_malformed(self):
        with pytest.raises(TokenError) as err:
            verify_token("not-a-token", KIND_DOCTOR, KEY_MAP, NOW)
        assert err.value.reason == "malformed"

    def test_tamper_evidence_over_random_mutations(self):
        # Flipping any single character of the token must invalidate it.
        token = self.fresh_doctor_token()
        rng = random.Random(7)
        alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_"
        rejected = 0
        for _ in range(1000):
            pos = rng.randrange(len(token))
            original = token[pos]
            if original == ".":
                continue
            replacement = rng.choice([c for c in alphabet if c != original])
            mutated = token[:pos] + replacement + token[pos + 1 :]
            try:
                verify_token(mutated, KIND_DOCTOR, KEY_MAP, NOW)
            except TokenError:
                rejected += 1
            else:
                pytest.fail(f"mutation at {pos} accepted")
        assert rejected > 900
