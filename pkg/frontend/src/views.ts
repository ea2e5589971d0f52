/** DOM views: login, consent capture, query form, date-wise results,
 * record detail, and the admin audit table. Pure rendering — handlers
 * are passed in, and every view returns the element it built.
 */

import type { AuditRecord, EhrRecord, LocateRow } from "./api.js";
import { countdown, datePart } from "./format.js";

export const EHR_TYPES = [
  "hemodialysis",
  "prescription",
  "lab_result",
  "imaging_report",
  "discharge_summary",
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function errorBanner(message: string): HTMLElement {
  return el("div", "error-banner", message);
}

export interface LoginHandlers {
  onSubmit: (hospitalId: string, doctorId: string, secret: string) => void;
}

export function renderLogin(hospitals: string[], handlers: LoginHandlers): HTMLElement {
  const form = el("form", "login-view");
  const hospitalSelect = el("select");
  hospitalSelect.name = "hospital";
  for (const id of hospitals) {
    const opt = el("option", undefined, id);
    opt.value = id;
    hospitalSelect.appendChild(opt);
  }
  const doctorInput = el("input");
  doctorInput.name = "doctor";
  doctorInput.placeholder = "doctor id";
  const secretInput = el("input");
  secretInput.name = "secret";
  secretInput.type = "password";
  secretInput.placeholder = "secret";
  const submit = el("button", undefined, "Log in");
  submit.type = "submit";

  form.append(hospitalSelect, doctorInput, secretInput, submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    handlers.onSubmit(hospitalSelect.value, doctorInput.value, secretInput.value);
  });
  return form;
}

export interface ConsentHandlers {
  onSubmit: (scan: string, scopeFromDate: string, scopeToDate: string) => void;
}

/** Consent capture. The scan field is cleared synchronously on submit so
 * the raw ID never outlives the request that carries it. */
export function renderConsent(handlers: ConsentHandlers): HTMLElement {
  const form = el("form", "consent-view");
  const scanInput = el("input");
  scanInput.name = "scan";
  scanInput.placeholder = "scan patient ID card";
  scanInput.autocomplete = "off";
  const fromInput = el("input");
  fromInput.name = "scope-from";
  fromInput.type = "date";
  const toInput = el("input");
  toInput.name = "scope-to";
  toInput.type = "date";
  const submit = el("button", undefined, "Request consent");
  submit.type = "submit";

  form.append(scanInput, fromInput, toInput, submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const scan = scanInput.value;
    scanInput.value = "";
    handlers.onSubmit(scan, fromInput.value, toInput.value);
  });
  return form;
}

export function renderConsentBadge(remainingSeconds: number): HTMLElement {
  const badge = el("span", "consent-badge");
  badge.textContent =
    remainingSeconds > 0 ? `consent expires in ${countdown(remainingSeconds)}` : "consent expired";
  return badge;
}

export interface QueryHandlers {
  onSubmit: (fromDate: string, toDate: string, types: string[], hospitals: string[]) => void;
}

export function renderQueryForm(
  hospitals: string[],
  enabled: boolean,
  handlers: QueryHandlers,
): HTMLElement {
  const form = el("form", "query-view");
  const fromInput = el("input");
  fromInput.name = "from";
  fromInput.type = "date";
  const toInput = el("input");
  toInput.name = "to";
  toInput.type = "date";

  const typeBoxes: HTMLInputElement[] = [];
  for (const type of EHR_TYPES) {
    const label = el("label", undefined, type);
    const box = el("input");
    box.type = "checkbox";
    box.value = type;
    typeBoxes.push(box);
    label.prepend(box);
    form.appendChild(label);
  }
  const hospitalBoxes: HTMLInputElement[] = [];
  for (const id of hospitals) {
    const label = el("label", undefined, id);
    const box = el("input");
    box.type = "checkbox";
    box.value = id;
    hospitalBoxes.push(box);
    label.prepend(box);
    form.appendChild(label);
  }

  const submit = el("button", undefined, "Locate records");
  submit.type = "submit";
  submit.disabled = !enabled;
  form.append(fromInput, toInput, submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    if (submit.disabled) return;
    handlers.onSubmit(
      fromInput.value,
      toInput.value,
      typeBoxes.filter((b) => b.checked).map((b) => b.value),
      hospitalBoxes.filter((b) => b.checked).map((b) => b.value),
    );
  });
  return form;
}

export interface ResultsHandlers {
  onDetails: (row: LocateRow) => void;
}

/** Date-wise list of located rows with a Details link per row. */
export function renderResults(rows: LocateRow[], handlers: ResultsHandlers): HTMLElement {
  const container = el("div", "results-view");
  if (rows.length === 0) {
    container.appendChild(el("p", "empty-state", "No records found for this query."));
    return container;
  }
  const table = el("table");
  const head = el("tr");
  for (const title of ["Date", "Type", "Hospital", ""]) {
    head.appendChild(el("th", undefined, title));
  }
  table.appendChild(head);
  for (const row of rows) {
    const tr = el("tr", "result-row");
    tr.appendChild(el("td", undefined, datePart(row.recorded_at)));
    tr.appendChild(el("td", undefined, row.ehr_type));
    tr.appendChild(el("td", undefined, row.location));
    const cell = el("td");
    const details = el("button", "details-link", "Details");
    details.type = "button";
    details.addEventListener("click", () => handlers.onDetails(row));
    cell.appendChild(details);
    tr.appendChild(cell);
    table.appendChild(tr);
  }
  container.appendChild(table);
  return container;
}

export function renderDetail(record: EhrRecord): HTMLElement {
  const panel = el("div", "detail-view");
  panel.appendChild(el("h3", undefined, `${record.ehr_type} ${record.ehr_id} @ ${record.hospital_id}`));
  const list = el("dl");
  const fields: Array<[string, string]> = [
    ["Patient", record.patient_name],
    ["Doctor", record.doctor_name],
    ["Recorded", record.recorded_at],
    ["Language", record.language],
  ];
  for (const [key, value] of Object.entries(record.payload)) {
    fields.push([key, String(value)]);
  }
  for (const [key, value] of fields) {
    list.appendChild(el("dt", undefined, key));
    list.appendChild(el("dd", undefined, value));
  }
  panel.appendChild(list);
  return panel;
}

export function renderAudit(records: AuditRecord[], failures: string[]): HTMLElement {
  const container = el("div", "audit-view");
  for (const failure of failures) {
    container.appendChild(errorBanner(`unreachable: ${failure}`));
  }
  if (records.length === 0) {
    container.appendChild(el("p", "empty-state", "No audit entries in this window."));
    return container;
  }
  const table = el("table");
  const head = el("tr");
  for (const title of ["When", "Server", "Doctor", "Action", "Outcome", "Detail"]) {
    head.appendChild(el("th", undefined, title));
  }
  table.appendChild(head);
  for (const record of records) {
    const tr = el("tr", "audit-row");
    for (const value of [
      record.occurred_at,
      record.server_id,
      record.actor_doctor,
      record.action,
      record.outcome,
      record.detail,
    ]) {
      tr.appendChild(el("td", undefined, value));
    }
    table.appendChild(tr);
  }
  container.appendChild(table);
  return container;
}
