"""The data-center patient index.

Holds only de-identified reference entries: hashed patient number, record
id, type, date and source hospital. No names, no payloads. Lookups go
through an in-memory map keyed by the hashed patient id; persistence is
an append-only change log replayed on restart, which keeps the on-disk
state byte-scannable for privacy checks and makes replay convergence
trivial to test.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .model import (
    ALL_EHR_TYPES,
    EhrType,
    ValidationError,
    canonical_json,
    is_patient_ref,
    parse_rfc3339,
)

MAX_LOCATE_ROWS = 1000


@dataclass(frozen=True)
class IndexEntry:
    patient_ref: str
    ehr_id: str
    ehr_type: EhrType
    recorded_at: str
    location: str
    sync_version: int

    def validate(self) -> None:
        if not is_patient_ref(self.patient_ref):
            raise ValidationError("patient_ref must be a 64-hex digest")
        if not self.ehr_id:
            raise ValidationError("ehr_id must be non-empty")
        if not self.location:
            raise ValidationError("location must be non-empty")
        if not isinstance(self.ehr_type, EhrType):
            raise ValidationError("ehr_type must be a known EHR type")
        if self.sync_version < 1:
            raise ValidationError("sync_version must be >= 1")
        parse_rfc3339(self.recorded_at)

    @property
    def key(self) -> tuple[str, str]:
        return (self.location, self.ehr_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "patient_ref": self.patient_ref,
            "ehr_id": self.ehr_id,
            "ehr_type": self.ehr_type.value,
            "recorded_at": self.recorded_at,
            "location": self.location,
            "sync_version": self.sync_version,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "IndexEntry":
        entry = cls(
            patient_ref=doc["patient_ref"],
            ehr_id=doc["ehr_id"],
            ehr_type=EhrType.parse(doc["ehr_type"]),
            recorded_at=doc["recorded_at"],
            location=doc["location"],
            sync_version=int(doc["sync_version"]),
        )
        entry.validate()
        return entry


@dataclass(frozen=True)
class LocateQuery:
    patient_ref: str
    date_from: str
    date_to: str
    ehr_types: tuple[str, ...] = ()
    hospitals: tuple[str, ...] = ()

    def validate(self) -> None:
        if not is_patient_ref(self.patient_ref):
            raise ValidationError("patient_ref must be a 64-hex digest")
        start = parse_rfc3339(self.date_from)
        end = parse_rfc3339(self.date_to)
        if start > end:
            raise ValidationError("date_from must be <= date_to")
        unknown = [t for t in self.ehr_types if t not in ALL_EHR_TYPES]
        if unknown:
            raise ValidationError(f"unknown ehr_types {unknown}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "patient_ref": self.patient_ref,
            "date_from": self.date_from,
            "date_to": self.date_to,
            "ehr_types": list(self.ehr_types),
            "hospitals": list(self.hospitals),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "LocateQuery":
        query = cls(
            patient_ref=doc["patient_ref"],
            date_from=doc["date_from"],
            date_to=doc["date_to"],
            ehr_types=tuple(doc.get("ehr_types") or ()),
            hospitals=tuple(doc.get("hospitals") or ()),
        )
        query.validate()
        return query


@dataclass
class LocateResult:
    rows: list[dict[str, str]] = field(default_factory=list)
    cursor: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {"rows": self.rows, "cursor": self.cursor}


def _row_of(entry: IndexEntry) -> dict[str, str]:
    return {
        "ehr_id": entry.ehr_id,
        "ehr_type": entry.ehr_type.value,
        "recorded_at": entry.recorded_at,
        "location": entry.location,
    }


def sort_rows(rows: list[dict[str, str]]) -> list[dict[str, str]]:
    """Newest first; ties broken by (location, ehr_id) ascending."""
    return sorted(
        rows,
        key=lambda r: (
            -parse_rfc3339(r["recorded_at"]).timestamp(),
            r["location"],
            r["ehr_id"],
        ),
    )


def _encode_cursor(offset: int) -> str:
    return base64.urlsafe_b64encode(json.dumps({"offset": offset}).encode()).decode()


def _decode_cursor(cursor: str) -> int:
    try:
        return int(json.loads(base64.urlsafe_b64decode(cursor.encode()))["offset"])
    except (ValueError, KeyError, TypeError):
        raise ValidationError("bad continuation cursor") from None


class PatientIndex:
    """In-memory index with an append-only change log under ``data_dir``.

    Upserts are serialized; many locate readers may run concurrently
    against the immutable entry snapshots.
    """

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "entries.log"
        self._by_key: dict[tuple[str, str], IndexEntry] = {}
        self._by_patient: dict[str, set[tuple[str, str]]] = {}
        self._lock = threading.Lock()
        self._replay()

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with self.log_path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    self._apply(IndexEntry.from_dict(json.loads(line)))

    def _apply(self, entry: IndexEntry) -> bool:
        current = self._by_key.get(entry.key)
        if current is not None and current.sync_version >= entry.sync_version:
            return False
        if current is not None and current.patient_ref != entry.patient_ref:
            self._by_patient[current.patient_ref].discard(entry.key)
        self._by_key[entry.key] = entry
        self._by_patient.setdefault(entry.patient_ref, set()).add(entry.key)
        return True

    def upsert(self, entries: list[IndexEntry]) -> int:
        """Apply a sync batch; returns how many entries changed state.

        Same-version duplicates are no-ops, so replays converge and the
        operation is idempotent.
        """
        for entry in entries:
            entry.validate()
        applied = 0
        with self._lock:
            accepted: list[IndexEntry] = []
            for entry in entries:
                if self._apply(entry):
                    accepted.append(entry)
                    applied += 1
            if accepted:
                with self.log_path.open("a", encoding="utf-8") as handle:
                    for entry in accepted:
                        handle.write(canonical_json(entry.to_dict()).decode() + "\n")
                    handle.flush()
        return applied

    def locate_unchecked(self, query: LocateQuery, cursor: Optional[str] = None) -> LocateResult:
        """Filter + sort without any token checks. Internal only; the wire
        surface always goes through the authenticated ``locate``."""
        query.validate()
        start = parse_rfc3339(query.date_from)
        end = parse_rfc3339(query.date_to)
        types = set(query.ehr_types) or ALL_EHR_TYPES
        hospitals = set(query.hospitals)
        with self._lock:
            keys = set(self._by_patient.get(query.patient_ref, ()))
            entries = [self._by_key[k] for k in keys]
        rows = [
            _row_of(e)
            for e in entries
            if e.ehr_type.value in types
            and (not hospitals or e.location in hospitals)
            and start <= parse_rfc3339(e.recorded_at) <= end
        ]
        rows = sort_rows(rows)
        offset = _decode_cursor(cursor) if cursor else 0
        window = rows[offset : offset + MAX_LOCATE_ROWS]
        next_cursor = None
        if offset + MAX_LOCATE_ROWS < len(rows):
            next_cursor = _encode_cursor(offset + MAX_LOCATE_ROWS)
        return LocateResult(rows=window, cursor=next_cursor)

    def entries(self) -> list[IndexEntry]:
        with self._lock:
            return list(self._by_key.values())

    def __len__(self) -> int:
        with self._lock:
            return len(self._by_key)

    def fingerprint(self) -> str:
        """Order-independent digest of the live entry set; used by the
        sync convergence checks."""
        docs = sorted(
            (e.to_dict() for e in self.entries()),
            key=lambda d: (d["location"], d["ehr_id"]),
        )
        return hashlib.sha256(canonical_json(docs)).hexdigest()
