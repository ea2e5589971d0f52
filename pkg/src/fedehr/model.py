"""Unified record model shared by every service.

The federation negotiates a single field schema (patient_id, ehr_id,
patient_name, doctor_name, ...); each hospital converts its legacy rows
into this shape before anything crosses a network boundary. Patients are
identified everywhere outside a hospital by a keyed hash of their national
ID card number, never by the raw number.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Mapping


class ValidationError(ValueError):
    """Raised when an input fails a structural precondition."""


class EhrType(str, Enum):
    HEMODIALYSIS = "hemodialysis"
    LAB_REPORT = "lab_report"
    RADIOLOGY_IMAGE = "radiology_image"
    TRANSCRIPTION_REPORT = "transcription_report"
    MEDICATION_HISTORY = "medication_history"

    @classmethod
    def parse(cls, value: str) -> "EhrType":
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown ehr_type: {value!r}") from None


ALL_EHR_TYPES = frozenset(t.value for t in EhrType)

PATIENT_REF_RE = re.compile(r"^[0-9a-f]{64}$")

# Field names every serialized unified record must carry (Table-1 names
# plus the federation extensions).
UNIFIED_FIELDS = (
    "hospital_id",
    "ehr_id",
    "patient_id",
    "patient_name",
    "doctor_name",
    "ehr_type",
    "recorded_at",
    "language",
    "payload",
    "shared",
)

_RFC3339_RE = re.compile(
    r"^\d{4}-\d{2}-\d{2}[Tt ]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:[Zz]|[+-]\d{2}:\d{2})$"
)


def parse_rfc3339(value: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware datetime."""
    if not isinstance(value, str) or not _RFC3339_RE.match(value):
        raise ValidationError(f"not an RFC 3339 timestamp: {value!r}")
    text = value.replace(" ", "T")
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise ValidationError(f"not an RFC 3339 timestamp: {value!r}") from None
    if parsed.tzinfo is None:
        raise ValidationError(f"timestamp missing UTC offset: {value!r}")
    return parsed


def format_rfc3339(value: datetime) -> str:
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.isoformat(timespec="seconds").replace("+00:00", "Z")


def is_patient_ref(value: str) -> bool:
    return isinstance(value, str) and bool(PATIENT_REF_RE.match(value))


def normalize_raw_id(raw_id: str) -> str:
    """Canonical form of a national ID: trimmed, uppercased, separators removed.

    Cross-hospital digest equality depends on every node applying the same
    normalization, so this lives next to the hash.
    """
    return raw_id.strip().upper().replace("-", "").replace(" ", "")


def hash_patient_id(raw_id: str, federation_key: bytes) -> str:
    """De-identify a national ID card number.

    Keyed (HMAC-SHA-256) rather than a bare hash: card numbers are low
    entropy, and the federation key keeps a compromised index server from
    running a dictionary over them.
    """
    if not raw_id or not raw_id.strip():
        raise ValidationError("raw patient id must be non-empty")
    if not isinstance(federation_key, (bytes, bytearray)) or len(federation_key) < 16:
        raise ValidationError("federation key must be at least 16 bytes")
    normalized = normalize_raw_id(raw_id)
    return hmac.new(bytes(federation_key), normalized.encode("utf-8"), hashlib.sha256).hexdigest()


@dataclass(frozen=True)
class HemodialysisPayload:
    pre_weight_kg: float
    post_weight_kg: float
    systolic_mmHg: int
    diastolic_mmHg: int
    duration_min: int
    dialyzer_model: str
    notes: str = ""

    def problems(self) -> list[str]:
        errs = []
        if self.pre_weight_kg < 0 or self.post_weight_kg < 0:
            errs.append("weights must be >= 0")
        # Plausibility bound used by the fixture generator, not a clinical rule.
        if self.post_weight_kg > self.pre_weight_kg + 0.5:
            errs.append("post_weight_kg exceeds pre_weight_kg + 0.5")
        for name in ("systolic_mmHg", "diastolic_mmHg", "duration_min"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) <= 0:
                errs.append(f"{name} must be a positive integer")
        return errs

    def to_dict(self) -> dict[str, Any]:
        return {
            "pre_weight_kg": self.pre_weight_kg,
            "post_weight_kg": self.post_weight_kg,
            "systolic_mmHg": self.systolic_mmHg,
            "diastolic_mmHg": self.diastolic_mmHg,
            "duration_min": self.duration_min,
            "dialyzer_model": self.dialyzer_model,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "HemodialysisPayload":
        try:
            return cls(
                pre_weight_kg=float(doc["pre_weight_kg"]),
                post_weight_kg=float(doc["post_weight_kg"]),
                systolic_mmHg=int(doc["systolic_mmHg"]),
                diastolic_mmHg=int(doc["diastolic_mmHg"]),
                duration_min=int(doc["duration_min"]),
                dialyzer_model=str(doc["dialyzer_model"]),
                notes=str(doc.get("notes", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad hemodialysis payload: {exc}") from None


@dataclass(frozen=True)
class UnifiedEhr:
    """One medical record in the negotiated common format.

    ``patient_id`` carries the de-identified digest; the raw card number
    never appears in a unified record.
    """

    hospital_id: str
    ehr_id: str
    patient_id: str
    patient_name: str
    doctor_name: str
    ehr_type: EhrType
    recorded_at: str
    language: str = "zh"
    payload: Mapping[str, Any] = field(default_factory=dict)
    shared: bool = True

    @property
    def key(self) -> tuple[str, str]:
        return (self.hospital_id, self.ehr_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "hospital_id": self.hospital_id,
            "ehr_id": self.ehr_id,
            "patient_id": self.patient_id,
            "patient_name": self.patient_name,
            "doctor_name": self.doctor_name,
            "ehr_type": self.ehr_type.value,
            "recorded_at": self.recorded_at,
            "language": self.language,
            "payload": dict(self.payload),
            "shared": self.shared,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "UnifiedEhr":
        missing = [name for name in UNIFIED_FIELDS if name not in doc]
        if missing:
            raise ValidationError(f"missing unified fields: {missing}")
        return cls(
            hospital_id=doc["hospital_id"],
            ehr_id=doc["ehr_id"],
            patient_id=doc["patient_id"],
            patient_name=doc["patient_name"],
            doctor_name=doc["doctor_name"],
            ehr_type=EhrType.parse(doc["ehr_type"]),
            recorded_at=doc["recorded_at"],
            language=doc.get("language", "zh"),
            payload=dict(doc.get("payload", {})),
            shared=bool(doc.get("shared", True)),
        )


@dataclass
class ValidationReport:
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def add(self, field_path: str, message: str) -> None:
        self.errors.append((field_path, message))


def validate_unified(record: UnifiedEhr) -> ValidationReport:
    """Check every unified-record invariant; violations come back as the
    report rather than an exception."""
    report = ValidationReport()
    for name in ("hospital_id", "ehr_id", "patient_name", "doctor_name"):
        value = getattr(record, name)
        if not isinstance(value, str) or not value:
            report.add(name, "must be a non-empty string")
    if not is_patient_ref(record.patient_id):
        report.add("patient_id", "must be a 64-char lowercase hex digest")
    if not isinstance(record.ehr_type, EhrType):
        report.add("ehr_type", "must be a known EHR type")
    try:
        parse_rfc3339(record.recorded_at)
    except ValidationError as exc:
        report.add("recorded_at", str(exc))
    if record.language not in ("zh", "en"):
        report.add("language", f"unsupported language tag {record.language!r}")
    if not isinstance(record.payload, Mapping):
        report.add("payload", "must be a mapping")
    elif record.ehr_type == EhrType.HEMODIALYSIS and record.payload:
        try:
            payload = HemodialysisPayload.from_dict(record.payload)
        except ValidationError as exc:
            report.add("payload", str(exc))
        else:
            for problem in payload.problems():
                report.add("payload", problem)
    return report


def canonical_json(value: Any) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no insignificant whitespace.

    Used for persistence, wire bodies and fingerprints, so byte equality
    means value equality.
    """
    return json.dumps(
        value, sort_keys=True, ensure_ascii=False, separators=(",", ":")
    ).encode("utf-8")


def canonical_serialize(record: UnifiedEhr) -> bytes:
    report = validate_unified(record)
    if not report.ok:
        raise ValidationError(f"invalid record: {report.errors}")
    return canonical_json(record.to_dict())
