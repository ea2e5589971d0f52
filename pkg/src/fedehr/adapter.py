"""Legacy store extraction and conversion to the unified format.

Each hospital registers one field mapping (its native column names to the
unified names) plus the date/number coercions its legacy formats need.
With a shared target format a federation of n hospitals maintains n
mappings instead of the n(n-1) pairwise converters it would otherwise
need.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Iterable

from .model import (
    EhrType,
    UnifiedEhr,
    ValidationError,
    format_rfc3339,
    hash_patient_id,
    validate_unified,
)

# Legacy hospital systems store naive local times; the federation pins
# them to the Macau offset when converting.
LEGACY_TZ = timezone(timedelta(hours=8))

REQUIRED_UNIFIED = (
    "patient_id",
    "ehr_id",
    "patient_name",
    "doctor_name",
    "recorded_at",
    "ehr_type",
)

# Unified targets a mapping entry may name: top-level fields plus dotted
# paths into the type-specific payload.
_TOP_LEVEL_TARGETS = frozenset(
    REQUIRED_UNIFIED + ("language", "hospital_id", "shared")
)


class ConversionError(ValueError):
    """A legacy record could not be converted to the unified format."""


class UnregisteredHospitalError(KeyError):
    pass


@dataclass(frozen=True)
class Coercion:
    field: str
    source: str
    target: str


@dataclass(frozen=True)
class FieldMapping:
    hospital_id: str
    entries: tuple[tuple[str, str], ...]
    type_coercions: tuple[Coercion, ...] = ()

    def validate(self) -> None:
        legacy_names = [legacy for legacy, _ in self.entries]
        if len(set(legacy_names)) != len(legacy_names):
            raise ValidationError(f"duplicate legacy field names in mapping for {self.hospital_id}")
        targets = set()
        for _, unified in self.entries:
            if unified in _TOP_LEVEL_TARGETS or unified.startswith("payload."):
                targets.add(unified)
            else:
                raise ValidationError(f"unknown unified field {unified!r}")
        missing = [name for name in REQUIRED_UNIFIED if name not in targets]
        if missing:
            raise ValidationError(
                f"mapping for {self.hospital_id} misses required unified fields: {missing}"
            )

    def rename(self) -> dict[str, str]:
        return dict(self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "hospital_id": self.hospital_id,
            "entries": [{"legacy": l, "unified": u} for l, u in self.entries],
            "type_coercions": [
                {"field": c.field, "source": c.source, "target": c.target}
                for c in self.type_coercions
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "FieldMapping":
        return cls(
            hospital_id=doc["hospital_id"],
            entries=tuple((e["legacy"], e["unified"]) for e in doc["entries"]),
            type_coercions=tuple(
                Coercion(c["field"], c["source"], c["target"])
                for c in doc.get("type_coercions", [])
            ),
        )

    @classmethod
    def load(cls, path: str | Path) -> "FieldMapping":
        mapping = cls.from_dict(json.loads(Path(path).read_text("utf-8")))
        mapping.validate()
        return mapping


class MappingRegistry:
    """Per-hospital mapping registry; lookups are lock-free reads on an
    immutable dict, registration swaps the dict atomically."""

    def __init__(self) -> None:
        self._mappings: dict[str, FieldMapping] = {}
        self._lock = threading.Lock()

    def register(self, mapping: FieldMapping) -> None:
        mapping.validate()
        with self._lock:
            updated = dict(self._mappings)
            updated[mapping.hospital_id] = mapping
            self._mappings = updated

    def get(self, hospital_id: str) -> FieldMapping:
        try:
            return self._mappings[hospital_id]
        except KeyError:
            raise UnregisteredHospitalError(hospital_id) from None

    def __len__(self) -> int:
        return len(self._mappings)

    def hospitals(self) -> list[str]:
        return sorted(self._mappings)


@dataclass(frozen=True)
class LegacyRecord:
    hospital_id: str
    document: dict[str, str]
    mtime: float = 0.0
    rev: int = 1
    shared: bool = True


class LegacyStore:
    """Simulated legacy hospital database: one JSON document per line."""

    def __init__(self, path: str | Path, hospital_id: str):
        self.path = Path(path)
        self.hospital_id = hospital_id

    def read_all(self) -> list[LegacyRecord]:
        if not self.path.exists():
            raise ConversionError(f"legacy store not found: {self.path}")
        records = []
        with self.path.open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                records.append(
                    LegacyRecord(
                        hospital_id=self.hospital_id,
                        document={k: str(v) for k, v in row["doc"].items()},
                        mtime=float(row.get("mtime", 0.0)),
                        rev=int(row.get("rev", 1)),
                        shared=bool(row.get("shared", True)),
                    )
                )
        return records

    def append(self, record: LegacyRecord) -> None:
        with self.path.open("a", encoding="utf-8") as handle:
            row = {
                "doc": record.document,
                "mtime": record.mtime,
                "rev": record.rev,
                "shared": record.shared,
            }
            handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def extract(store: LegacyStore, since: float) -> list[LegacyRecord]:
    """Shared records modified after ``since`` (epoch seconds), oldest first."""
    rows = [r for r in store.read_all() if r.shared and r.mtime > since]
    rows.sort(key=lambda r: (r.mtime, r.document.get("_order", "")))
    return rows


def _coerce(value: str, source: str, target: str) -> Any:
    try:
        if source.startswith("datetime:"):
            fmt = source.split(":", 1)[1]
            parsed = datetime.strptime(value, _java_to_strptime(fmt))
            return format_rfc3339(parsed.replace(tzinfo=LEGACY_TZ))
        if source == "epoch_seconds":
            return format_rfc3339(datetime.fromtimestamp(float(value), tz=LEGACY_TZ))
        if source == "string":
            if target == "float":
                return float(value)
            if target == "int":
                return int(value)
            if target == "bool":
                return value.strip().lower() in ("1", "true", "yes")
            return value
    except (ValueError, OverflowError) as exc:
        raise ConversionError(f"cannot coerce {value!r} via {source}->{target}: {exc}") from None
    raise ConversionError(f"unknown coercion {source!r} -> {target!r}")


def _java_to_strptime(fmt: str) -> str:
    # Mapping files use the date-pattern letters the hospital vendors
    # documented (yyyy-MM-dd HH:mm style).
    return (
        fmt.replace("yyyy", "%Y")
        .replace("MM", "%m")
        .replace("dd", "%d")
        .replace("HH", "%H")
        .replace("mm", "%M")
        .replace("ss", "%S")
    )


def convert(
    record: LegacyRecord, registry: MappingRegistry, federation_key: bytes
) -> UnifiedEhr:
    """Rename, coerce and de-identify one legacy record.

    The legacy identity value is hashed into ``patient_id`` and discarded;
    it must never survive into the unified record.
    """
    mapping = registry.get(record.hospital_id)
    coercions = {c.field: c for c in mapping.type_coercions}

    unified: dict[str, Any] = {}
    payload: dict[str, Any] = {}
    for legacy_name, unified_name in mapping.entries:
        if legacy_name not in record.document:
            raise ConversionError(
                f"{record.hospital_id}: legacy field {legacy_name!r} absent"
            )
        value: Any = record.document[legacy_name]
        coercion = coercions.get(unified_name)
        if coercion is not None:
            value = _coerce(value, coercion.source, coercion.target)
        if unified_name.startswith("payload."):
            payload[unified_name.split(".", 1)[1]] = value
        else:
            unified[unified_name] = value

    raw_identity = unified.pop("patient_id")
    result = UnifiedEhr(
        hospital_id=record.hospital_id,
        ehr_id=str(unified["ehr_id"]),
        patient_id=hash_patient_id(raw_identity, federation_key),
        patient_name=unified["patient_name"],
        doctor_name=unified["doctor_name"],
        ehr_type=EhrType.parse(unified["ehr_type"]),
        recorded_at=unified["recorded_at"],
        language=unified.get("language", "zh"),
        payload=payload,
        shared=record.shared,
    )
    report = validate_unified(result)
    if not report.ok:
        raise ConversionError(f"converted record invalid: {report.errors}")
    return result


def conversion_count(n: int, mode: str) -> int:
    """Converters a federation of ``n`` hospitals must maintain: every
    pair bidirectionally (n(n-1)) versus one per hospital into the shared
    format (n)."""
    if n < 0:
        raise ValidationError("hospital count must be >= 0")
    if mode == "pairwise":
        return n * (n - 1)
    if mode == "unified":
        return n
    raise ValidationError(f"unknown mode {mode!r}")


def build_registry(mapping_files: Iterable[str | Path]) -> MappingRegistry:
    registry = MappingRegistry()
    for path in mapping_files:
        registry.register(FieldMapping.load(path))
    return registry
