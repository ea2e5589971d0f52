"""Append-only, hash-chained audit log.

Every server keeps its own log; locate and transfer append before the
response leaves the building (write-ahead), so a response without a
matching log line cannot happen. Each line carries the digest of its
predecessor, making removal or in-place edits detectable after the fact.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from .model import ValidationError, canonical_json, parse_rfc3339

ACTIONS = ("login", "consent_granted", "locate", "transfer", "denied")
OUTCOMES = ("success", "denied", "error")

GENESIS_DIGEST = "0" * 64


class AuditChainError(Exception):
    """The persisted log fails hash-chain verification."""


@dataclass(frozen=True)
class AuditRecord:
    event_id: int
    occurred_at: str
    server_id: str
    actor_doctor: str
    actor_hospital: str
    action: str
    outcome: str
    ehr_id: Optional[str] = None
    patient_ref: Optional[str] = None
    detail: str = ""
    prev_digest: str = GENESIS_DIGEST
    digest: str = ""

    def body(self) -> dict[str, Any]:
        return {
            "event_id": self.event_id,
            "occurred_at": self.occurred_at,
            "server_id": self.server_id,
            "actor_doctor": self.actor_doctor,
            "actor_hospital": self.actor_hospital,
            "action": self.action,
            "outcome": self.outcome,
            "ehr_id": self.ehr_id,
            "patient_ref": self.patient_ref,
            "detail": self.detail,
            "prev_digest": self.prev_digest,
        }

    def to_dict(self) -> dict[str, Any]:
        doc = self.body()
        doc["digest"] = self.digest
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "AuditRecord":
        return cls(**doc)


def _chain_digest(body: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(body)).hexdigest()


class AuditLog:
    """One server's log: canonical-JSON lines, single appender, readers
    see a consistent prefix."""

    def __init__(self, path: str | Path, server_id: str):
        self.path = Path(path)
        self.server_id = server_id
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []
        self._next_id = 1
        self._prev_digest = GENESIS_DIGEST
        if self.path.exists():
            self._records = self._load()
            if self._records:
                self._next_id = self._records[-1].event_id + 1
                self._prev_digest = self._records[-1].digest
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def _load(self) -> list[AuditRecord]:
        records = []
        with self.path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    records.append(AuditRecord.from_dict(json.loads(line)))
        return records

    def append(
        self,
        *,
        action: str,
        outcome: str,
        actor_doctor: str,
        actor_hospital: str,
        ehr_id: Optional[str] = None,
        patient_ref: Optional[str] = None,
        detail: str = "",
        occurred_at: Optional[datetime] = None,
    ) -> int:
        if action not in ACTIONS:
            raise ValidationError(f"unknown audit action {action!r}")
        if outcome not in OUTCOMES:
            raise ValidationError(f"unknown audit outcome {outcome!r}")
        when = occurred_at or datetime.now(timezone.utc)
        with self._lock:
            record = AuditRecord(
                event_id=self._next_id,
                occurred_at=when.isoformat(timespec="seconds").replace("+00:00", "Z"),
                server_id=self.server_id,
                actor_doctor=actor_doctor,
                actor_hospital=actor_hospital,
                action=action,
                outcome=outcome,
                ehr_id=ehr_id,
                patient_ref=patient_ref,
                detail=detail,
                prev_digest=self._prev_digest,
            )
            record = AuditRecord(**{**record.body(), "digest": _chain_digest(record.body())})
            line = canonical_json(record.to_dict()).decode("utf-8")
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")
                handle.flush()
            self._records.append(record)
            self._next_id += 1
            self._prev_digest = record.digest
            return record.event_id

    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def query(
        self, ehr_id: str, date_from: str, date_to: str
    ) -> list[AuditRecord]:
        """All events touching ``ehr_id`` in the inclusive window, oldest
        first."""
        start = parse_rfc3339(date_from)
        end = parse_rfc3339(date_to)
        if start > end:
            raise ValidationError("date_from must be <= date_to")
        hits = [
            r
            for r in self.records()
            if r.ehr_id == ehr_id and start <= parse_rfc3339(r.occurred_at) <= end
        ]
        hits.sort(key=lambda r: (parse_rfc3339(r.occurred_at), r.event_id))
        return hits

    def verify_chain(self) -> int:
        """Re-derive every digest from disk; returns the verified record
        count or raises AuditChainError."""
        return verify_log_file(self.path)


def verify_log_file(path: str | Path) -> int:
    prev = GENESIS_DIGEST
    count = 0
    last_id = 0
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record = AuditRecord.from_dict(json.loads(line))
            if record.prev_digest != prev:
                raise AuditChainError(f"{path}:{lineno}: broken predecessor link")
            if record.digest != _chain_digest(record.body()):
                raise AuditChainError(f"{path}:{lineno}: digest mismatch")
            if record.event_id <= last_id:
                raise AuditChainError(f"{path}:{lineno}: event_id not increasing")
            prev = record.digest
            last_id = record.event_id
            count += 1
    return count


def merge_records(batches: list[list[AuditRecord]]) -> list[AuditRecord]:
    """Merge per-server query results by occurrence time."""
    merged = [record for batch in batches for record in batch]
    merged.sort(key=lambda r: (parse_rfc3339(r.occurred_at), r.server_id, r.event_id))
    return merged
