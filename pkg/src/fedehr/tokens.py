"""Two-token access control.

Every cross-hospital read needs both a doctor token (issued by the
doctor's own hospital after credential login, role-based) and a consent
token (issued when the patient scans their ID card at the point of care,
scoped to a date range and record types, short-lived). Tokens are compact
three-part base64url strings signed with HMAC-SHA-256 under the issuing
hospital's key; every service holds the federation key map and verifies
locally.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Iterable

from .model import ALL_EHR_TYPES, ValidationError, hash_patient_id, is_patient_ref

DOCTOR_TOKEN_TTL = timedelta(hours=8)
CONSENT_TOKEN_TTL = timedelta(minutes=15)

KIND_DOCTOR = "doctor"
KIND_CONSENT = "consent"
KIND_NODE = "node"


class TokenError(Exception):
    """Verification failure; ``reason`` is one of bad_signature, expired,
    wrong_kind, malformed."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class AuthenticationError(Exception):
    pass


def _b64e(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _b64d(text: str) -> bytes:
    padded = text + "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(padded.encode("ascii"))


def sign_token(kind: str, claims: dict[str, Any], key: bytes) -> str:
    header = {"alg": "HS256", "kind": kind}
    head = _b64e(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
    body = _b64e(json.dumps(claims, sort_keys=True, separators=(",", ":")).encode())
    mac = hmac.new(key, f"{head}.{body}".encode("ascii"), hashlib.sha256).digest()
    return f"{head}.{body}.{_b64e(mac)}"


def verify_token(
    token: str, expected_kind: str, key_map: dict[str, bytes], now: datetime
) -> dict[str, Any]:
    """Check signature, expiry and kind; returns the claims on success."""
    try:
        head, body, sig = token.split(".")
        header = json.loads(_b64d(head))
        claims = json.loads(_b64d(body))
        signature = _b64d(sig)
    except (ValueError, json.JSONDecodeError, AttributeError):
        raise TokenError("malformed") from None
    if not isinstance(header, dict) or not isinstance(claims, dict):
        raise TokenError("malformed")
    issuer = claims.get("iss")
    key = key_map.get(issuer)
    if key is None:
        raise TokenError("bad_signature", f"unknown issuer {issuer!r}")
    expected = hmac.new(key, f"{head}.{body}".encode("ascii"), hashlib.sha256).digest()
    if not hmac.compare_digest(signature, expected):
        raise TokenError("bad_signature")
    if header.get("kind") != expected_kind:
        raise TokenError("wrong_kind", f"got {header.get('kind')!r}")
    try:
        expires = float(claims["exp"])
        issued = float(claims["iat"])
    except (KeyError, TypeError, ValueError):
        raise TokenError("malformed", "missing iat/exp") from None
    if expires <= issued:
        raise TokenError("malformed", "exp <= iat")
    if now.timestamp() >= expires:
        raise TokenError("expired")
    return claims


def issue_doctor_token(
    subject: str,
    role: str,
    hospital_id: str,
    key: bytes,
    now: datetime,
    ttl: timedelta = DOCTOR_TOKEN_TTL,
) -> str:
    if role not in ("doctor", "admin"):
        raise ValidationError(f"unknown role {role!r}")
    claims = {
        "sub": subject,
        "role": role,
        "hospital_id": hospital_id,
        "iss": hospital_id,
        "iat": now.timestamp(),
        "exp": (now + ttl).timestamp(),
    }
    return sign_token(KIND_DOCTOR, claims, key)


def issue_node_token(hospital_id: str, key: bytes, now: datetime) -> str:
    claims = {
        "sub": hospital_id,
        "iss": hospital_id,
        "iat": now.timestamp(),
        "exp": (now + timedelta(hours=1)).timestamp(),
    }
    return sign_token(KIND_NODE, claims, key)


def issue_consent_token(
    patient_ref: str,
    granted_to: str,
    scope_from: str,
    scope_to: str,
    scope_types: Iterable[str],
    hospital_id: str,
    key: bytes,
    now: datetime,
    ttl: timedelta = CONSENT_TOKEN_TTL,
) -> str:
    if ttl > CONSENT_TOKEN_TTL:
        raise ValidationError("consent lifetime capped at 15 minutes")
    if not is_patient_ref(patient_ref):
        raise ValidationError("patient_ref must be a 64-hex digest")
    types = sorted(set(scope_types))
    unknown = [t for t in types if t not in ALL_EHR_TYPES]
    if unknown:
        raise ValidationError(f"unknown scope types {unknown}")
    claims = {
        "patient_ref": patient_ref,
        "granted_to": granted_to,
        "scope_from": scope_from,
        "scope_to": scope_to,
        "scope_types": types,
        "iss": hospital_id,
        "iat": now.timestamp(),
        "exp": (now + ttl).timestamp(),
    }
    return sign_token(KIND_CONSENT, claims, key)


def grant_consent(
    scan: str,
    doctor_claims: dict[str, Any],
    scope_from: str,
    scope_to: str,
    scope_types: Iterable[str],
    federation_key: bytes,
    hospital_id: str,
    signing_key: bytes,
    now: datetime,
) -> str:
    """Turn a simulated ID-card scan into a scoped consent token.

    The raw scan value is hashed and dropped here; nothing downstream of
    this call ever sees it.
    """
    if not scan or not scan.strip():
        raise ValidationError("empty ID card scan")
    patient_ref = hash_patient_id(scan, federation_key)
    return issue_consent_token(
        patient_ref=patient_ref,
        granted_to=doctor_claims["sub"],
        scope_from=scope_from,
        scope_to=scope_to,
        scope_types=scope_types,
        hospital_id=hospital_id,
        key=signing_key,
        now=now,
    )


@dataclass(frozen=True)
class Credential:
    doctor_id: str
    secret_sha256: str
    role: str


class CredentialStore:
    """Fixture credential table for one hospital (doctor id -> hashed
    secret + role). Read-mostly; safe under concurrent logins."""

    def __init__(self, credentials: dict[str, Credential]):
        self._credentials = dict(credentials)
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "CredentialStore":
        doc = json.loads(Path(path).read_text("utf-8"))
        creds = {
            doctor_id: Credential(doctor_id, entry["secret_sha256"], entry["role"])
            for doctor_id, entry in doc.items()
        }
        return cls(creds)

    @staticmethod
    def hash_secret(secret: str) -> str:
        return hashlib.sha256(secret.encode("utf-8")).hexdigest()

    def check(self, doctor_id: str, secret: str) -> Credential:
        cred = self._credentials.get(doctor_id)
        if cred is None or not hmac.compare_digest(
            cred.secret_sha256, self.hash_secret(secret)
        ):
            raise AuthenticationError("bad credentials")
        return cred


def doctor_login(
    store: CredentialStore,
    doctor_id: str,
    secret: str,
    hospital_id: str,
    signing_key: bytes,
    now: datetime,
) -> str:
    cred = store.check(doctor_id, secret)
    return issue_doctor_token(doctor_id, cred.role, hospital_id, signing_key, now)


def load_key_map(path: str | Path) -> dict[str, bytes]:
    doc = json.loads(Path(path).read_text("utf-8"))
    return {server_id: bytes.fromhex(hex_key) for server_id, hex_key in doc.items()}
