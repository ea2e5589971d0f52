"""Drives the see-a-doctor walkthrough end to end against a running
topology: login, consent scan, locate at the index, parallel transfer
fan-out, display. Every step lands in a transcript the tests compare
against the manifest oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Optional

from . import client
from .config import Topology
from .hospital import FanoutResult, fanout_fetch
from .index_core import LocateQuery
from .model import format_rfc3339, hash_patient_id


@dataclass
class Step:
    step: int
    actor: str
    action: str
    outcome: str
    latency_ms: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "actor": self.actor,
            "action": self.action,
            "outcome": self.outcome,
            "latency_ms": round(self.latency_ms, 3),
        }


@dataclass
class ScenarioTranscript:
    patient_digest: str = ""
    at_hospital: str = ""
    steps: list[Step] = field(default_factory=list)
    rows: list[dict[str, str]] = field(default_factory=list)
    records: list[dict[str, Any]] = field(default_factory=list)
    failures: list[tuple[str, str, str]] = field(default_factory=list)
    transfers_by_hospital: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(s.outcome in ("success", "partial") for s in self.steps)

    def add(self, step: int, actor: str, action: str, outcome: str, latency_ms: float = 0.0):
        self.steps.append(Step(step, actor, action, outcome, latency_ms))

    def to_dict(self) -> dict[str, Any]:
        return {
            "patient_digest": self.patient_digest,
            "at_hospital": self.at_hospital,
            "steps": [s.to_dict() for s in self.steps],
            "rows": self.rows,
            "records": self.records,
            "failures": [list(f) for f in self.failures],
            "transfers_by_hospital": self.transfers_by_hospital,
        }


class ScenarioError(Exception):
    def __init__(self, transcript: ScenarioTranscript, message: str):
        super().__init__(message)
        self.transcript = transcript


def _timed(fn):
    start = time.perf_counter()
    value = fn()
    return value, (time.perf_counter() - start) * 1000.0


def run_see_doctor(
    topology: Topology,
    *,
    raw_patient_id: str,
    at_hospital: str,
    date_from: str,
    date_to: str,
    doctor_id: str,
    doctor_secret: str,
    ehr_types: tuple[str, ...] = (),
    hospitals: tuple[str, ...] = (),
    transfer_timeout: float = 5.0,
) -> ScenarioTranscript:
    """Steps 1-17: authenticate, capture consent, locate, fan out, display.

    Raises ScenarioError (with the partial transcript attached) if a step
    that must succeed fails; per-hospital transfer failures are partial
    results, not errors.
    """
    transcript = ScenarioTranscript(at_hospital=at_hospital)
    hospital_url = topology.server(at_hospital).base_url
    index_url = topology.index_server.base_url

    transcript.add(1, f"doctor@{at_hospital}", "submit credentials", "success")
    try:
        doctor_token, ms = _timed(lambda: client.login(hospital_url, doctor_id, doctor_secret))
    except (client.ServiceError, OSError) as exc:
        transcript.add(2, at_hospital, "verify credentials", "error")
        raise ScenarioError(transcript, f"login failed: {exc}")
    transcript.add(2, at_hospital, "verify credentials", "success", ms)
    transcript.add(3, at_hospital, "issue doctor token", "success")
    transcript.add(4, f"doctor@{at_hospital}", "receive doctor token", "success")
    transcript.add(5, f"doctor@{at_hospital}", "compose record query", "success")

    transcript.add(6, "patient", "scan ID card", "success")
    transcript.add(7, at_hospital, "receive scan", "success")
    try:
        consent_token, ms = _timed(
            lambda: client.consent(
                hospital_url,
                doctor_token,
                raw_patient_id,
                date_from,
                date_to,
                list(ehr_types) or None,
            )
        )
    except (client.ServiceError, OSError) as exc:
        transcript.add(8, at_hospital, "hash patient id", "error")
        raise ScenarioError(transcript, f"consent failed: {exc}")
    transcript.add(8, at_hospital, "hash patient id", "success")
    transcript.add(9, at_hospital, "issue consent token", "success", ms)
    transcript.add(10, f"doctor@{at_hospital}", "receive consent token", "success")

    patient_digest = hash_patient_id(raw_patient_id, topology.federation_key())
    transcript.patient_digest = patient_digest

    query = LocateQuery(
        patient_ref=patient_digest,
        date_from=date_from,
        date_to=date_to,
        ehr_types=ehr_types,
        hospitals=hospitals,
    )
    transcript.add(11, f"client@{at_hospital}", "send locate request", "success")
    try:
        rows, ms = _timed(
            lambda: client.locate_all(index_url, query, doctor_token, consent_token)
        )
    except (client.ServiceError, OSError) as exc:
        transcript.add(13, "PI", "locate shared records", "error")
        raise ScenarioError(transcript, f"locate failed: {exc}")
    transcript.add(12, topology.index_server.id, "audit locate", "success")
    transcript.add(13, topology.index_server.id, "return locate rows", "success", ms)
    transcript.rows = rows

    remote_rows = [r for r in rows]
    transcript.add(
        14,
        f"client@{at_hospital}",
        f"fan out {len(remote_rows)} transfer requests",
        "success",
    )
    fanout, ms = _timed(
        lambda: fanout_fetch(
            remote_rows,
            doctor_token,
            consent_token,
            topology.peer_urls(),
            timeout=transfer_timeout,
        )
    )
    transcript.records = [r.to_dict() for r in fanout.records]
    transcript.failures = list(fanout.failures)
    counts: dict[str, int] = {}
    for record in fanout.records:
        counts[record.hospital_id] = counts.get(record.hospital_id, 0) + 1
    transcript.transfers_by_hospital = counts
    outcome = "success" if not fanout.failures else "partial"
    transcript.add(15, "hospitals", "audit transfers", outcome)
    transcript.add(16, "hospitals", "transfer records", outcome, ms)
    transcript.add(17, f"doctor@{at_hospital}", f"display {len(fanout.records)} records", "success")
    return transcript


def scenario_window(transcript_start: Optional[datetime] = None) -> tuple[str, str]:
    """A generous audit window around 'now' for transcript queries."""
    now = transcript_start or datetime.now(timezone.utc)
    return (
        format_rfc3339(now.replace(hour=0, minute=0, second=0)),
        format_rfc3339(now.replace(hour=23, minute=59, second=59)),
    )
