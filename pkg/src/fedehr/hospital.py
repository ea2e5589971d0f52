"""Hospital-node internals: the local unified record store, the sync
agent that exports index entries, and the parallel fan-out fetch used
when a patient's records live at several hospitals."""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import httpx

from .adapter import ConversionError, LegacyStore, MappingRegistry, convert, extract
from .index_core import IndexEntry
from .model import UnifiedEhr, canonical_json, format_rfc3339
from .tokens import issue_node_token

FANOUT_PARALLELISM = 8
TRANSFER_TIMEOUT_S = 5.0


class NotFoundError(KeyError):
    pass


class LocalStore:
    """Durable per-hospital store of unified records, replayed from an
    append-only log. Last put wins per (hospital_id, ehr_id)."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "records.log"
        self._records: dict[tuple[str, str], UnifiedEhr] = {}
        self._lock = threading.Lock()
        if self.log_path.exists():
            with self.log_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    if line.strip():
                        record = UnifiedEhr.from_dict(json.loads(line))
                        self._records[record.key] = record

    def put(self, record: UnifiedEhr) -> None:
        with self._lock:
            current = self._records.get(record.key)
            if current is not None and current == record:
                return
            with self.log_path.open("a", encoding="utf-8") as handle:
                handle.write(canonical_json(record.to_dict()).decode() + "\n")
                handle.flush()
            self._records[record.key] = record

    def get(self, hospital_id: str, ehr_id: str) -> UnifiedEhr:
        with self._lock:
            try:
                return self._records[(hospital_id, ehr_id)]
            except KeyError:
                raise NotFoundError(f"no record ({hospital_id}, {ehr_id})") from None

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


@dataclass
class SyncReport:
    started_at: str
    finished_at: str = ""
    extracted: int = 0
    converted: int = 0
    pushed: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "extracted": self.extracted,
            "converted": self.converted,
            "pushed": self.pushed,
            "errors": [list(e) for e in self.errors],
        }


class SyncAgent:
    """Exports newly shared legacy records: extract since the high-water
    mark, convert, store locally, push index entries, then (only on full
    success) advance the mark. Re-running after any failure replays the
    same records; the index upsert is idempotent, so at-least-once is
    safe.
    """

    def __init__(
        self,
        *,
        hospital_id: str,
        legacy_store: LegacyStore,
        registry: MappingRegistry,
        federation_key: bytes,
        local_store: LocalStore,
        index_url: str,
        signing_key: bytes,
        state_dir: str | Path,
        http_timeout: float = 10.0,
    ):
        self.hospital_id = hospital_id
        self.legacy_store = legacy_store
        self.registry = registry
        self.federation_key = federation_key
        self.local_store = local_store
        self.index_url = index_url.rstrip("/")
        self.signing_key = signing_key
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.watermark_path = self.state_dir / "sync_watermark.json"
        self.http_timeout = http_timeout
        self._run_lock = threading.Lock()
        # Test hook: raise after the push, before the watermark persists.
        self.fail_before_watermark = False

    def watermark(self) -> float:
        if self.watermark_path.exists():
            return float(json.loads(self.watermark_path.read_text())["since_mtime"])
        return 0.0

    def _persist_watermark(self, value: float) -> None:
        tmp = self.watermark_path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"since_mtime": value}))
        tmp.replace(self.watermark_path)

    def run(self, now: Optional[datetime] = None) -> SyncReport:
        if not self._run_lock.acquire(blocking=False):
            # Single-flight: an overlapping trigger reports and backs off.
            report = SyncReport(started_at=format_rfc3339(datetime.now(timezone.utc)))
            report.errors.append(("*", "sync already running"))
            report.finished_at = report.started_at
            return report
        try:
            return self._run_locked(now or datetime.now(timezone.utc))
        finally:
            self._run_lock.release()

    def _run_locked(self, now: datetime) -> SyncReport:
        report = SyncReport(started_at=format_rfc3339(now))
        since = self.watermark()
        legacy_rows = extract(self.legacy_store, since)
        report.extracted = len(legacy_rows)

        batch: list[IndexEntry] = []
        max_mtime = since
        for row in legacy_rows:
            try:
                record = convert(row, self.registry, self.federation_key)
            except ConversionError as exc:
                report.errors.append((row.document.get("_order", "?"), str(exc)))
                continue
            self.local_store.put(record)
            batch.append(
                IndexEntry(
                    patient_ref=record.patient_id,
                    ehr_id=record.ehr_id,
                    ehr_type=record.ehr_type,
                    recorded_at=record.recorded_at,
                    location=self.hospital_id,
                    sync_version=row.rev,
                )
            )
            report.converted += 1
            max_mtime = max(max_mtime, row.mtime)

        if batch:
            try:
                self._push(batch)
            except (httpx.HTTPError, OSError) as exc:
                report.errors.append(("*", f"index push failed: {exc}"))
                report.finished_at = format_rfc3339(datetime.now(timezone.utc))
                return report
            report.pushed = len(batch)

        if self.fail_before_watermark:
            raise RuntimeError("injected crash before watermark persist")
        if max_mtime > since:
            self._persist_watermark(max_mtime)
        report.finished_at = format_rfc3339(datetime.now(timezone.utc))
        return report

    def _push(self, batch: list[IndexEntry]) -> None:
        token = issue_node_token(
            self.hospital_id, self.signing_key, datetime.now(timezone.utc)
        )
        response = httpx.post(
            f"{self.index_url}/index/upsert",
            content=canonical_json({"entries": [e.to_dict() for e in batch]}),
            headers={"X-Node-Token": token, "Content-Type": "application/json"},
            timeout=self.http_timeout,
        )
        response.raise_for_status()


@dataclass
class FanoutResult:
    records: list[UnifiedEhr] = field(default_factory=list)
    failures: list[tuple[str, str, str]] = field(default_factory=list)


def fanout_fetch(
    rows: list[dict[str, str]],
    doctor_token: str,
    consent_token: str,
    peer_urls: dict[str, str],
    *,
    local_hospital_id: Optional[str] = None,
    local_store: Optional[LocalStore] = None,
    parallelism: int = FANOUT_PARALLELISM,
    timeout: float = TRANSFER_TIMEOUT_S,
    client_factory: Optional[Callable[[], httpx.Client]] = None,
) -> FanoutResult:
    """Fetch every located record, hitting remote hospitals in parallel.

    Rows are grouped by owning hospital; hospitals are fetched
    concurrently (bounded), each with its own timeout. A hospital that
    fails mid-batch is reported once in ``failures`` and contributes no
    records, so every input row is accounted for exactly once.
    """
    by_hospital: dict[str, list[dict[str, str]]] = {}
    for row in rows:
        by_hospital.setdefault(row["location"], []).append(row)

    result = FanoutResult()

    def fetch_hospital(hospital_id: str, hospital_rows: list[dict[str, str]]):
        if local_store is not None and hospital_id == local_hospital_id:
            fetched = [local_store.get(hospital_id, r["ehr_id"]) for r in hospital_rows]
            return hospital_id, fetched, None
        url = peer_urls.get(hospital_id)
        if url is None:
            return hospital_id, [], ("unknown_hospital", "no peer URL configured")
        fetched = []
        try:
            client = client_factory() if client_factory else httpx.Client(timeout=timeout)
            with client:
                for row in hospital_rows:
                    response = client.post(
                        f"{url.rstrip('/')}/transfer",
                        json={"ehr_id": row["ehr_id"], "ehr_type": row["ehr_type"]},
                        headers={
                            "X-Doctor-Token": doctor_token,
                            "X-Consent-Token": consent_token,
                        },
                        timeout=timeout,
                    )
                    if response.status_code != 200:
                        detail = response.json().get("message", response.text)
                        return hospital_id, [], (f"http_{response.status_code}", detail)
                    fetched.append(UnifiedEhr.from_dict(response.json()["record"]))
        except (httpx.HTTPError, OSError) as exc:
            return hospital_id, [], ("unreachable", str(exc))
        return hospital_id, fetched, None

    if not by_hospital:
        return result
    with ThreadPoolExecutor(max_workers=min(parallelism, len(by_hospital))) as pool:
        futures = [
            pool.submit(fetch_hospital, hospital_id, hospital_rows)
            for hospital_id, hospital_rows in sorted(by_hospital.items())
        ]
        for future in futures:
            hospital_id, fetched, failure = future.result()
            if failure is not None:
                result.failures.append((hospital_id, failure[0], failure[1]))
            else:
                result.records.extend(fetched)
    return result
