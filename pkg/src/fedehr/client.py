"""HTTP client helpers used by the harness, the scenario driver and the
federated audit view."""

from __future__ import annotations

from typing import Any, Optional

import httpx

from .audit import AuditRecord, merge_records
from .http_api import CONSENT_HEADER, DOCTOR_HEADER
from .index_core import LocateQuery

DEFAULT_TIMEOUT = 10.0


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code


def _check(response: httpx.Response) -> dict[str, Any]:
    if response.status_code >= 400:
        try:
            doc = response.json()
        except ValueError:
            doc = {}
        raise ServiceError(
            response.status_code, doc.get("code", "error"), doc.get("message", response.text)
        )
    return response.json()


def login(base_url: str, doctor_id: str, secret: str, timeout: float = DEFAULT_TIMEOUT) -> str:
    doc = _check(
        httpx.post(
            f"{base_url}/auth/login",
            json={"doctor_id": doctor_id, "secret": secret},
            timeout=timeout,
        )
    )
    return doc["token"]


def consent(
    base_url: str,
    doctor_token: str,
    scan: str,
    scope_from: str,
    scope_to: str,
    scope_types: Optional[list[str]] = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> str:
    doc = _check(
        httpx.post(
            f"{base_url}/auth/consent",
            json={
                "scan": scan,
                "scope_from": scope_from,
                "scope_to": scope_to,
                "scope_types": scope_types,
            },
            headers={DOCTOR_HEADER: doctor_token},
            timeout=timeout,
        )
    )
    return doc["token"]


def locate(
    index_url: str,
    query: LocateQuery,
    doctor_token: str,
    consent_token: str,
    cursor: Optional[str] = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> dict[str, Any]:
    body = query.to_dict()
    if cursor:
        body["cursor"] = cursor
    return _check(
        httpx.post(
            f"{index_url}/locate",
            json=body,
            headers={DOCTOR_HEADER: doctor_token, CONSENT_HEADER: consent_token},
            timeout=timeout,
        )
    )


def locate_all(
    index_url: str,
    query: LocateQuery,
    doctor_token: str,
    consent_token: str,
    timeout: float = DEFAULT_TIMEOUT,
) -> list[dict[str, str]]:
    """Follow continuation cursors until the result set is complete."""
    rows: list[dict[str, str]] = []
    cursor = None
    while True:
        doc = locate(index_url, query, doctor_token, consent_token, cursor, timeout)
        rows.extend(doc["rows"])
        cursor = doc.get("cursor")
        if not cursor:
            return rows


def transfer(
    hospital_url: str,
    ehr_id: str,
    ehr_type: str,
    doctor_token: str,
    consent_token: str,
    timeout: float = DEFAULT_TIMEOUT,
) -> dict[str, Any]:
    doc = _check(
        httpx.post(
            f"{hospital_url}/transfer",
            json={"ehr_id": ehr_id, "ehr_type": ehr_type},
            headers={DOCTOR_HEADER: doctor_token, CONSENT_HEADER: consent_token},
            timeout=timeout,
        )
    )
    return doc["record"]


def query_audit(
    base_url: str,
    admin_token: str,
    ehr_id: str,
    date_from: str,
    date_to: str,
    timeout: float = DEFAULT_TIMEOUT,
) -> list[AuditRecord]:
    doc = _check(
        httpx.get(
            f"{base_url}/audit",
            params={"ehr_id": ehr_id, "from": date_from, "to": date_to},
            headers={DOCTOR_HEADER: admin_token},
            timeout=timeout,
        )
    )
    return [AuditRecord.from_dict(r) for r in doc["records"]]


def federated_audit(
    server_urls: dict[str, str],
    admin_token: str,
    ehr_id: str,
    date_from: str,
    date_to: str,
    timeout: float = DEFAULT_TIMEOUT,
) -> tuple[list[AuditRecord], list[tuple[str, str]]]:
    """Query every server's audit endpoint and merge by occurrence time.

    Unreachable servers are reported as (server_id, reason) failures and
    the merge proceeds with whatever answered.
    """
    batches: list[list[AuditRecord]] = []
    failures: list[tuple[str, str]] = []
    for server_id, url in sorted(server_urls.items()):
        try:
            batches.append(query_audit(url, admin_token, ehr_id, date_from, date_to, timeout))
        except (httpx.HTTPError, OSError) as exc:
            failures.append((server_id, str(exc)))
    return merge_records(batches), failures


def sync_now(hospital_url: str, timeout: float = 60.0) -> dict[str, Any]:
    return _check(httpx.post(f"{hospital_url}/sync/run", timeout=timeout))


def healthz(base_url: str, timeout: float = 2.0) -> bool:
    try:
        return httpx.get(f"{base_url}/healthz", timeout=timeout).status_code == 200
    except (httpx.HTTPError, OSError):
        return False
