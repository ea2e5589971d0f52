/** In-memory stand-in for the index server and hospital nodes.
 *
 * Speaks the same JSON shapes and token header conventions as the real
 * services, and records every request so tests can inspect the network
 * layer (token headers present, raw IDs absent).
 */

import type { FetchLike, ServiceUrls } from "../src/api.js";

export interface Recorded {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: string;
}

export const URLS: ServiceUrls = {
  index: "http://pi.test",
  hospitals: { HC: "http://hc.test", KW: "http://kw.test", UH: "http://uh.test" },
};

export const RAW_ID = "M1234567";
export const PATIENT_DIGEST = "ab".repeat(32);

const CREDENTIALS: Record<string, { secret: string; role: string }> = {
  "dr.chan": { secret: "chan-secret", role: "doctor" },
  auditor: { secret: "audit-secret", role: "admin" },
};

export const FIXTURE_ROWS = [
  { ehr_id: "0221", ehr_type: "hemodialysis", recorded_at: "2015-09-30T10:30:00+08:00", location: "HC" },
  { ehr_id: "0105", ehr_type: "hemodialysis", recorded_at: "2015-06-14T09:00:00+08:00", location: "KW" },
  { ehr_id: "0077", ehr_type: "prescription", recorded_at: "2014-02-02T15:45:00+08:00", location: "KW" },
];

function recordFor(row: (typeof FIXTURE_ROWS)[number]) {
  return {
    hospital_id: row.location,
    ehr_id: row.ehr_id,
    patient_id: PATIENT_DIGEST,
    patient_name: "Yang Yingying",
    doctor_name: "Dr. Chan",
    ehr_type: row.ehr_type,
    recorded_at: row.recorded_at,
    language: "en",
    payload: { pre_weight_kg: 61.2, post_weight_kg: 58.9, notes: "stable session" },
    shared: true,
  };
}

function b64url(text: string): string {
  return btoa(text).replace(/\+/g, "-").replace(/\//g, "_").replace(/=+$/, "");
}

export function makeToken(kind: string, claims: Record<string, unknown>): string {
  return [
    b64url(JSON.stringify({ alg: "HS256", kind })),
    b64url(JSON.stringify(claims)),
    b64url("fake-signature"),
  ].join(".");
}

export interface FakeBackend {
  fetchFn: FetchLike;
  requests: Recorded[];
  audit: Array<{ action: string; ehr_id: string | null; server_id: string }>;
  /** Seconds of consent validity handed out (default 900). */
  consentTtl: number;
  /** Server ids that answer every request with a network error. */
  downServers: Set<string>;
  /** Rows per locate page; >0 exercises cursor continuation. */
  pageSize: number;
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function apiError(status: number, code: string, message: string): Response {
  return json(status, { code, message, detail: null });
}

export function fakeBackend(): FakeBackend {
  const requests: Recorded[] = [];
  const audit: FakeBackend["audit"] = [];
  const backend: FakeBackend = {
    requests,
    audit,
    consentTtl: 900,
    downServers: new Set(),
    pageSize: 0,
    fetchFn: async (input, init) => {
      const headers: Record<string, string> = {};
      for (const [key, value] of Object.entries((init?.headers ?? {}) as Record<string, string>)) {
        headers[key.toLowerCase()] = value;
      }
      const recorded: Recorded = {
        url: input,
        method: init?.method ?? "GET",
        headers,
        body: typeof init?.body === "string" ? init.body : "",
      };
      requests.push(recorded);
      return route(backend, recorded);
    },
  };
  return backend;
}

function serverIdFor(url: string): string | null {
  if (url.startsWith(URLS.index)) return "PI";
  for (const [id, base] of Object.entries(URLS.hospitals)) {
    if (url.startsWith(base)) return id;
  }
  return null;
}

function claimsOf(token: string | undefined): Record<string, unknown> | null {
  if (!token) return null;
  try {
    const b64 = token.split(".")[1].replace(/-/g, "+").replace(/_/g, "/");
    return JSON.parse(atob(b64 + "=".repeat((4 - (b64.length % 4)) % 4)));
  } catch {
    return null;
  }
}

function route(backend: FakeBackend, req: Recorded): Response {
  const serverId = serverIdFor(req.url);
  if (serverId === null) throw new TypeError(`no route for ${req.url}`);
  if (backend.downServers.has(serverId)) throw new TypeError("fetch failed: connection refused");
  const path = new URL(req.url).pathname;
  const body = req.body ? JSON.parse(req.body) : {};
  const doctor = claimsOf(req.headers["x-doctor-token"]);
  const consent = claimsOf(req.headers["x-consent-token"]);

  if (path === "/auth/login") {
    const entry = CREDENTIALS[body.doctor_id];
    if (!entry || entry.secret !== body.secret) {
      return apiError(401, "unauthenticated", "bad credentials");
    }
    return json(200, {
      token: makeToken("doctor", {
        sub: body.doctor_id,
        role: entry.role,
        iss: serverId,
        hospital_id: serverId,
        exp: Date.now() / 1000 + 8 * 3600,
      }),
    });
  }

  if (doctor === null) return apiError(401, "unauthenticated", "doctor token required");

  if (path === "/auth/consent") {
    if (body.scan !== RAW_ID) return apiError(403, "forbidden", "unknown patient");
    return json(200, {
      token: makeToken("consent", {
        patient_ref: PATIENT_DIGEST,
        granted_to: doctor.sub,
        iss: serverId,
        scope_from: body.scope_from,
        scope_to: body.scope_to,
        exp: Date.now() / 1000 + backend.consentTtl,
      }),
    });
  }

  if (path === "/locate") {
    if (consent === null) return apiError(403, "forbidden", "consent token required");
    backend.audit.push({ action: "locate", ehr_id: null, server_id: serverId });
    let rows = FIXTURE_ROWS.filter(
      (row) =>
        body.patient_ref === PATIENT_DIGEST &&
        row.recorded_at >= body.date_from.slice(0, 10) &&
        row.recorded_at.slice(0, 10) <= body.date_to.slice(0, 10) &&
        (!body.ehr_types?.length || body.ehr_types.includes(row.ehr_type)) &&
        (!body.hospitals?.length || body.hospitals.includes(row.location)),
    );
    rows = [...rows].sort((a, b) => b.recorded_at.localeCompare(a.recorded_at));
    if (backend.pageSize > 0) {
      const start = body.cursor ? Number(body.cursor) : 0;
      const page = rows.slice(start, start + backend.pageSize);
      const next = start + backend.pageSize < rows.length ? String(start + backend.pageSize) : null;
      return json(200, { rows: page, cursor: next });
    }
    return json(200, { rows, cursor: null });
  }

  if (path === "/transfer") {
    if (doctor.role !== "doctor") return apiError(403, "forbidden", "transfer requires the doctor role");
    if (consent === null) return apiError(403, "forbidden", "consent token required");
    if (consent.patient_ref !== PATIENT_DIGEST) {
      return apiError(403, "forbidden", "consent is for a different patient");
    }
    const row = FIXTURE_ROWS.find(
      (r) => r.location === serverId && r.ehr_id === body.ehr_id && r.ehr_type === body.ehr_type,
    );
    if (!row) return apiError(404, "not_found", `no record ${body.ehr_id} at ${serverId}`);
    backend.audit.push({ action: "transfer", ehr_id: row.ehr_id, server_id: serverId });
    return json(200, { record: recordFor(row) });
  }

  if (path === "/audit") {
    if (doctor.role !== "admin") return apiError(403, "forbidden", "audit requires the admin role");
    const wanted = new URL(req.url).searchParams.get("ehr_id");
    const records = backend.audit
      .filter((entry) => entry.server_id === serverId && entry.ehr_id === wanted)
      .map((entry, i) => ({
        event_id: i + 1,
        occurred_at: "2015-09-30T12:00:00Z",
        server_id: entry.server_id,
        actor_doctor: "dr.chan",
        actor_hospital: "HC",
        action: entry.action,
        outcome: "success",
        ehr_id: entry.ehr_id,
        patient_ref: PATIENT_DIGEST,
        detail: "",
      }));
    return json(200, { records });
  }

  return apiError(404, "not_found", `no route ${path}`);
}
