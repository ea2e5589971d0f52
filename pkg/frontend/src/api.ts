/** Typed client for the federation's HTTP services.
 *
 * The console talks to exactly two kinds of servers: the patient index
 * (locate + audit) and hospital nodes (login, consent, transfer, audit).
 * Every locate and transfer call requires BOTH the doctor token and the
 * consent token; the client refuses to send the request otherwise, so
 * the two-way authentication invariant holds at the network layer.
 */

export interface ServiceUrls {
  index: string;
  hospitals: Record<string, string>;
}

export interface LocateRow {
  ehr_id: string;
  ehr_type: string;
  recorded_at: string;
  location: string;
}

export interface LocateQuery {
  patient_ref: string;
  date_from: string;
  date_to: string;
  ehr_types?: string[];
  hospitals?: string[];
}

export interface EhrRecord {
  hospital_id: string;
  ehr_id: string;
  patient_id: string;
  patient_name: string;
  doctor_name: string;
  ehr_type: string;
  recorded_at: string;
  language: string;
  payload: Record<string, unknown>;
  shared: boolean;
}

export interface AuditRecord {
  event_id: number;
  occurred_at: string;
  server_id: string;
  actor_doctor: string;
  actor_hospital: string;
  action: string;
  outcome: string;
  ehr_id: string | null;
  patient_ref: string | null;
  detail: string;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const DOCTOR_HEADER = "X-Doctor-Token";
const CONSENT_HEADER = "X-Consent-Token";

/** Decode the claims segment of a three-part token without verifying it.
 * Verification is the server's job; the console only reads display
 * fields (role, expiry, patient digest). */
export function decodeClaims(token: string): Record<string, unknown> {
  const parts = token.split(".");
  if (parts.length !== 3) throw new Error("malformed token");
  const b64 = parts[1].replace(/-/g, "+").replace(/_/g, "/");
  const pad = b64 + "=".repeat((4 - (b64.length % 4)) % 4);
  return JSON.parse(atob(pad));
}

async function checked(response: Response): Promise<any> {
  if (response.ok) return response.json();
  let code = "error";
  let message = response.statusText;
  try {
    const doc = await response.json();
    code = doc.code ?? code;
    message = doc.message ?? message;
  } catch {
    // non-JSON error body: keep the status text
  }
  throw new ServiceError(response.status, code, message);
}

export class ApiClient {
  constructor(
    readonly urls: ServiceUrls,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private hospitalUrl(hospitalId: string): string {
    const url = this.urls.hospitals[hospitalId];
    if (!url) throw new Error(`unknown hospital ${hospitalId}`);
    return url;
  }

  private post(url: string, body: unknown, headers: Record<string, string> = {}) {
    return this.fetchFn(url, {
      method: "POST",
      headers: { "Content-Type": "application/json", ...headers },
      body: JSON.stringify(body),
    });
  }

  async login(hospitalId: string, doctorId: string, secret: string): Promise<string> {
    const doc = await checked(
      await this.post(`${this.hospitalUrl(hospitalId)}/auth/login`, {
        doctor_id: doctorId,
        secret,
      }),
    );
    return doc.token;
  }

  async consent(
    hospitalId: string,
    doctorToken: string,
    scan: string,
    scopeFrom: string,
    scopeTo: string,
    scopeTypes?: string[],
  ): Promise<string> {
    const doc = await checked(
      await this.post(
        `${this.hospitalUrl(hospitalId)}/auth/consent`,
        { scan, scope_from: scopeFrom, scope_to: scopeTo, scope_types: scopeTypes ?? null },
        { [DOCTOR_HEADER]: doctorToken },
      ),
    );
    return doc.token;
  }

  /** Locate reference rows, following continuation cursors. */
  async locate(
    query: LocateQuery,
    doctorToken: string,
    consentToken: string,
  ): Promise<LocateRow[]> {
    if (!doctorToken || !consentToken) {
      throw new Error("locate requires both a doctor token and a consent token");
    }
    const rows: LocateRow[] = [];
    let cursor: string | undefined;
    do {
      const body: Record<string, unknown> = { ...query };
      if (cursor) body.cursor = cursor;
      const doc = await checked(
        await this.post(`${this.urls.index}/locate`, body, {
          [DOCTOR_HEADER]: doctorToken,
          [CONSENT_HEADER]: consentToken,
        }),
      );
      rows.push(...doc.rows);
      cursor = doc.cursor ?? undefined;
    } while (cursor);
    return rows;
  }

  async transfer(
    row: LocateRow,
    doctorToken: string,
    consentToken: string,
  ): Promise<EhrRecord> {
    if (!doctorToken || !consentToken) {
      throw new Error("transfer requires both a doctor token and a consent token");
    }
    const doc = await checked(
      await this.post(
        `${this.hospitalUrl(row.location)}/transfer`,
        { ehr_id: row.ehr_id, ehr_type: row.ehr_type },
        { [DOCTOR_HEADER]: doctorToken, [CONSENT_HEADER]: consentToken },
      ),
    );
    return doc.record;
  }

  /** Query one server's audit trail (admin token required by the server). */
  async audit(
    serverUrl: string,
    adminToken: string,
    ehrId: string,
    dateFrom: string,
    dateTo: string,
  ): Promise<AuditRecord[]> {
    const params = new URLSearchParams({ ehr_id: ehrId, from: dateFrom, to: dateTo });
    const doc = await checked(
      await this.fetchFn(`${serverUrl}/audit?${params}`, {
        headers: { [DOCTOR_HEADER]: adminToken },
      }),
    );
    return doc.records;
  }

  /** Merge audit trails from every server; unreachable ones are skipped
   * and reported so the view can show a banner. */
  async federatedAudit(
    adminToken: string,
    ehrId: string,
    dateFrom: string,
    dateTo: string,
  ): Promise<{ records: AuditRecord[]; failures: string[] }> {
    const urls: Array<[string, string]> = [
      ["PI", this.urls.index],
      ...Object.entries(this.urls.hospitals),
    ];
    const records: AuditRecord[] = [];
    const failures: string[] = [];
    for (const [serverId, url] of urls) {
      try {
        records.push(...(await this.audit(url, adminToken, ehrId, dateFrom, dateTo)));
      } catch (err) {
        failures.push(`${serverId}: ${err instanceof Error ? err.message : String(err)}`);
      }
    }
    records.sort(
      (a, b) =>
        a.occurred_at.localeCompare(b.occurred_at) ||
        a.server_id.localeCompare(b.server_id) ||
        a.event_id - b.event_id,
    );
    return { records, failures };
  }
}
