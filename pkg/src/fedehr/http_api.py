"""FastAPI apps for the two server roles.

The index server answers locate queries and accepts sync upserts; each
hospital node serves login/consent, record transfer and a manual sync
trigger. Both verify tokens locally against the federation key map and
append to their own audit log before any success response goes out.
"""

from __future__ import annotations

from datetime import datetime, timezone
from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .adapter import LegacyStore, build_registry
from .audit import AuditLog
from .config import ServerConfig, Topology
from .hospital import LocalStore, NotFoundError, SyncAgent
from .index_core import IndexEntry, LocateQuery, PatientIndex
from .model import ALL_EHR_TYPES, EhrType, ValidationError, parse_rfc3339
from .tokens import (
    KIND_CONSENT,
    KIND_DOCTOR,
    KIND_NODE,
    AuthenticationError,
    CredentialStore,
    TokenError,
    doctor_login,
    grant_consent,
    verify_token,
)

DOCTOR_HEADER = "X-Doctor-Token"
CONSENT_HEADER = "X-Consent-Token"
NODE_HEADER = "X-Node-Token"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: str = ""):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


def _error_response(exc: ApiError) -> JSONResponse:
    return JSONResponse(
        status_code=exc.status,
        content={"code": exc.code, "message": exc.message, "detail": exc.detail},
    )


def _install_handlers(app: FastAPI) -> None:
    # Desk-scale harness: the browser console runs from another loopback
    # origin, so allow cross-origin calls with the custom token headers.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=[DOCTOR_HEADER, CONSENT_HEADER, NODE_HEADER, "Content-Type"],
    )

    @app.exception_handler(ApiError)
    async def handle_api_error(_req: Request, exc: ApiError):
        return _error_response(exc)

    @app.exception_handler(ValidationError)
    async def handle_validation(_req: Request, exc: ValidationError):
        return _error_response(ApiError(400, "validation", str(exc)))


def _now() -> datetime:
    return datetime.now(timezone.utc)


def _require_doctor(request: Request, key_map: dict[str, bytes]) -> dict[str, Any]:
    token = request.headers.get(DOCTOR_HEADER)
    if not token:
        raise ApiError(401, "unauthenticated", "missing doctor token")
    try:
        return verify_token(token, KIND_DOCTOR, key_map, _now())
    except TokenError as exc:
        raise ApiError(401, "unauthenticated", "invalid doctor token", exc.reason)


def _require_consent(request: Request, key_map: dict[str, bytes]) -> dict[str, Any]:
    token = request.headers.get(CONSENT_HEADER)
    if not token:
        raise ApiError(403, "consent_required", "missing consent token")
    try:
        return verify_token(token, KIND_CONSENT, key_map, _now())
    except TokenError as exc:
        raise ApiError(403, "consent_required", "invalid consent token", exc.reason)


def _consent_covers(consent: dict[str, Any], date_from: str, date_to: str, types: set[str]) -> bool:
    scope_types = set(consent.get("scope_types", ()))
    wanted = types or set(ALL_EHR_TYPES)
    if not wanted <= scope_types:
        return False
    try:
        return parse_rfc3339(consent["scope_from"]) <= parse_rfc3339(date_from) and parse_rfc3339(
            consent["scope_to"]
        ) >= parse_rfc3339(date_to)
    except (KeyError, ValidationError):
        return False


def _audit_query_params(request: Request, audit: AuditLog, key_map: dict[str, bytes]):
    claims = _require_doctor(request, key_map)
    if claims.get("role") != "admin":
        raise ApiError(403, "forbidden", "audit queries require the admin role")
    params = request.query_params
    ehr_id = params.get("ehr_id")
    date_from = params.get("from")
    date_to = params.get("to")
    if not ehr_id or not date_from or not date_to:
        raise ApiError(400, "validation", "ehr_id, from and to are required")
    records = audit.query(ehr_id, date_from, date_to)
    return {"records": [r.to_dict() for r in records]}


def create_index_app(topology: Topology, server_id: Optional[str] = None) -> FastAPI:
    server = topology.server(server_id) if server_id else topology.index_server
    app = FastAPI(title="patient-index", docs_url=None, redoc_url=None)
    _install_handlers(app)

    index = PatientIndex(server.data_dir / "index")
    audit = AuditLog(server.data_dir / "audit.log", server.id)
    key_map = topology.key_map()

    app.state.index = index
    app.state.audit = audit

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "server": server.id}

    @app.post("/index/upsert")
    async def upsert(request: Request):
        token = request.headers.get(NODE_HEADER)
        if not token:
            raise ApiError(401, "unauthenticated", "missing node token")
        try:
            verify_token(token, KIND_NODE, key_map, _now())
        except TokenError as exc:
            raise ApiError(401, "unauthenticated", "invalid node token", exc.reason)
        body = await request.json()
        try:
            entries = [IndexEntry.from_dict(e) for e in body.get("entries", [])]
        except (KeyError, TypeError, ValidationError) as exc:
            raise ApiError(400, "validation", f"malformed entry: {exc}")
        return {"applied": index.upsert(entries)}

    @app.post("/locate")
    async def locate(request: Request):
        doctor = _require_doctor(request, key_map)

        def deny(message: str, detail: str = "") -> ApiError:
            audit.append(
                action="denied",
                outcome="denied",
                actor_doctor=doctor.get("sub", "?"),
                actor_hospital=doctor.get("hospital_id", "?"),
                detail=f"locate: {message}",
            )
            return ApiError(403, "forbidden", message, detail)

        if doctor.get("role") != "doctor":
            raise deny("locate requires the doctor role")
        try:
            consent = _require_consent(request, key_map)
        except ApiError as exc:
            deny(exc.message)
            raise
        body = await request.json()
        query = LocateQuery.from_dict(body)
        if consent.get("patient_ref") != query.patient_ref:
            raise deny("consent is for a different patient")
        if consent.get("granted_to") != doctor.get("sub"):
            raise deny("consent was granted to a different doctor")
        if not _consent_covers(consent, query.date_from, query.date_to, set(query.ehr_types)):
            raise deny("consent scope does not cover the query")
        result = index.locate_unchecked(query, cursor=body.get("cursor"))
        # Write-ahead: the locate is on the books before the caller sees rows.
        audit.append(
            action="locate",
            outcome="success",
            actor_doctor=doctor["sub"],
            actor_hospital=doctor.get("hospital_id", "?"),
            patient_ref=query.patient_ref,
            detail=f"rows={len(result.rows)}",
        )
        return result.to_dict()

    @app.get("/audit")
    async def audit_endpoint(request: Request):
        return _audit_query_params(request, audit, key_map)

    return app


def create_hospital_app(topology: Topology, server_id: str) -> FastAPI:
    server = topology.server(server_id)
    app = FastAPI(title=f"hospital-{server.id}", docs_url=None, redoc_url=None)
    _install_handlers(app)

    store = LocalStore(server.data_dir / "store")
    audit = AuditLog(server.data_dir / "audit.log", server.id)
    credentials = CredentialStore.load(server.credentials_file)
    key_map = topology.key_map()
    federation_key = topology.federation_key()
    signing_key = key_map[server.id]
    registry = build_registry([server.mapping_file])
    agent = SyncAgent(
        hospital_id=server.id,
        legacy_store=LegacyStore(server.legacy_store, server.id),
        registry=registry,
        federation_key=federation_key,
        local_store=store,
        index_url=topology.index_server.base_url,
        signing_key=signing_key,
        state_dir=server.data_dir,
    )

    app.state.store = store
    app.state.audit = audit
    app.state.sync_agent = agent

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "server": server.id}

    @app.post("/auth/login")
    async def login(request: Request):
        body = await request.json()
        doctor_id = body.get("doctor_id", "")
        try:
            token = doctor_login(
                credentials, doctor_id, body.get("secret", ""), server.id, signing_key, _now()
            )
        except AuthenticationError:
            audit.append(
                action="login",
                outcome="denied",
                actor_doctor=doctor_id or "?",
                actor_hospital=server.id,
            )
            raise ApiError(401, "unauthenticated", "bad credentials")
        audit.append(
            action="login", outcome="success", actor_doctor=doctor_id, actor_hospital=server.id
        )
        return {"token": token}

    @app.post("/auth/consent")
    async def consent(request: Request):
        doctor = _require_doctor(request, key_map)
        body = await request.json()
        token = grant_consent(
            scan=body.get("scan", ""),
            doctor_claims=doctor,
            scope_from=body["scope_from"],
            scope_to=body["scope_to"],
            scope_types=body.get("scope_types") or sorted(ALL_EHR_TYPES),
            federation_key=federation_key,
            hospital_id=server.id,
            signing_key=signing_key,
            now=_now(),
        )
        claims = verify_token(token, KIND_CONSENT, key_map, _now())
        audit.append(
            action="consent_granted",
            outcome="success",
            actor_doctor=doctor["sub"],
            actor_hospital=server.id,
            patient_ref=claims["patient_ref"],
        )
        return {"token": token}

    @app.post("/transfer")
    async def transfer(request: Request):
        doctor = _require_doctor(request, key_map)
        body = await request.json()
        ehr_id = body.get("ehr_id", "")
        if not ehr_id:
            raise ApiError(400, "validation", "ehr_id must be non-empty")
        ehr_type = EhrType.parse(body.get("ehr_type", ""))

        def deny(message: str) -> ApiError:
            audit.append(
                action="denied",
                outcome="denied",
                actor_doctor=doctor.get("sub", "?"),
                actor_hospital=doctor.get("hospital_id", "?"),
                ehr_id=ehr_id,
                detail=f"transfer: {message}",
            )
            return ApiError(403, "forbidden", message)

        if doctor.get("role") != "doctor":
            raise deny("transfer requires the doctor role")
        try:
            consent = _require_consent(request, key_map)
        except ApiError as exc:
            deny(exc.message)
            raise
        try:
            record = store.get(server.id, ehr_id)
        except NotFoundError:
            raise ApiError(404, "not_found", f"no record {ehr_id} at {server.id}")
        if record.ehr_type != ehr_type:
            raise ApiError(404, "not_found", f"record {ehr_id} is not of type {ehr_type.value}")
        if consent.get("patient_ref") != record.patient_id:
            raise deny("consent is for a different patient")
        if consent.get("granted_to") != doctor.get("sub"):
            raise deny("consent was granted to a different doctor")
        if not _consent_covers(
            consent, record.recorded_at, record.recorded_at, {record.ehr_type.value}
        ):
            raise deny("consent scope does not cover this record")
        audit.append(
            action="transfer",
            outcome="success",
            actor_doctor=doctor["sub"],
            actor_hospital=doctor.get("hospital_id", "?"),
            ehr_id=ehr_id,
            patient_ref=record.patient_id,
        )
        return {"record": record.to_dict()}

    @app.post("/sync/run")
    async def sync_run():
        report = agent.run()
        return report.to_dict()

    @app.get("/audit")
    async def audit_endpoint(request: Request):
        return _audit_query_params(request, audit, key_map)

    return app
