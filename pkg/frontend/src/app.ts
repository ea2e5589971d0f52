/** Console wiring: one session, one screen per workflow stage.
 *
 * Login enables the consent form; a granted consent enables the query
 * form until its countdown hits zero; query results fan into detail
 * fetches (one in flight at a time); admins additionally get the
 * federated audit viewer.
 */

import { ApiClient, type FetchLike, type LocateRow, type ServiceUrls } from "./api.js";
import { endOfDayRfc3339, toRfc3339 } from "./format.js";
import { SessionStore } from "./session.js";
import {
  errorBanner,
  renderAudit,
  renderConsent,
  renderConsentBadge,
  renderDetail,
  renderLogin,
  renderQueryForm,
  renderResults,
} from "./views.js";

export interface App {
  session: SessionStore;
  stop: () => void;
}

export function mountApp(root: HTMLElement, urls: ServiceUrls, fetchFn?: FetchLike): App {
  const api = new ApiClient(urls, fetchFn);
  const session = new SessionStore();
  const hospitals = Object.keys(urls.hospitals).sort();

  const status = document.createElement("div");
  status.className = "status";
  const loginSection = document.createElement("section");
  loginSection.className = "section-login";
  const consentSection = document.createElement("section");
  consentSection.className = "section-consent";
  const querySection = document.createElement("section");
  querySection.className = "section-query";
  const resultsSection = document.createElement("section");
  resultsSection.className = "section-results";
  const detailSection = document.createElement("section");
  detailSection.className = "section-detail";
  const auditSection = document.createElement("section");
  auditSection.className = "section-audit";
  root.append(status, loginSection, consentSection, querySection, resultsSection, detailSection, auditSection);

  let atHospital = hospitals[0] ?? "";
  let detailInFlight = false;

  function showError(target: HTMLElement, err: unknown): void {
    target.prepend(errorBanner(err instanceof Error ? err.message : String(err)));
  }

  function renderQuerySection(): void {
    querySection.replaceChildren();
    if (!session.isLoggedIn() || session.isAdmin()) return;
    querySection.appendChild(renderConsentBadge(session.consentRemaining()));
    querySection.appendChild(
      renderQueryForm(hospitals, session.canQuery(), {
        onSubmit: async (fromDate, toDate, types, queryHospitals) => {
          const snapshot = session.snapshot();
          if (!session.canQuery() || !snapshot.consentPatientRef) return;
          try {
            const rows = await api.locate(
              {
                patient_ref: snapshot.consentPatientRef,
                date_from: toRfc3339(fromDate),
                date_to: endOfDayRfc3339(toDate),
                ehr_types: types,
                hospitals: queryHospitals,
              },
              snapshot.doctorToken!,
              snapshot.consentToken!,
            );
            resultsSection.replaceChildren(renderResults(rows, { onDetails: openDetail }));
          } catch (err) {
            resultsSection.replaceChildren();
            showError(resultsSection, err);
          }
        },
      }),
    );
  }

  async function openDetail(row: LocateRow): Promise<void> {
    const snapshot = session.snapshot();
    if (detailInFlight || !session.canQuery()) return;
    detailInFlight = true;
    try {
      const record = await api.transfer(row, snapshot.doctorToken!, snapshot.consentToken!);
      detailSection.replaceChildren(renderDetail(record));
    } catch (err) {
      detailSection.replaceChildren();
      showError(detailSection, err);
    } finally {
      detailInFlight = false;
    }
  }

  function renderAuditSection(): void {
    auditSection.replaceChildren();
    if (!session.isAdmin()) return;
    const form = document.createElement("form");
    const ehrInput = document.createElement("input");
    ehrInput.name = "ehr-id";
    ehrInput.placeholder = "ehr id";
    const fromInput = document.createElement("input");
    fromInput.name = "from";
    fromInput.type = "date";
    const toInput = document.createElement("input");
    toInput.name = "to";
    toInput.type = "date";
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.textContent = "Audit";
    form.append(ehrInput, fromInput, toInput, submit);
    const output = document.createElement("div");
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      const token = session.snapshot().doctorToken;
      if (!token) return;
      try {
        const { records, failures } = await api.federatedAudit(
          token,
          ehrInput.value,
          toRfc3339(fromInput.value),
          endOfDayRfc3339(toInput.value),
        );
        output.replaceChildren(renderAudit(records, failures));
      } catch (err) {
        output.replaceChildren();
        showError(output, err);
      }
    });
    auditSection.append(form, output);
  }

  function renderConsentSection(): void {
    consentSection.replaceChildren();
    if (!session.isLoggedIn() || session.isAdmin()) return;
    consentSection.appendChild(
      renderConsent({
        onSubmit: async (scan, scopeFromDate, scopeToDate) => {
          const token = session.snapshot().doctorToken;
          if (!token) return;
          try {
            const consentToken = await api.consent(
              atHospital,
              token,
              scan,
              toRfc3339(scopeFromDate),
              endOfDayRfc3339(scopeToDate),
            );
            session.consentGranted(consentToken);
          } catch (err) {
            showError(consentSection, err);
          }
        },
      }),
    );
  }

  loginSection.appendChild(
    renderLogin(hospitals, {
      onSubmit: async (hospitalId, doctorId, secret) => {
        try {
          atHospital = hospitalId;
          session.loginSucceeded(await api.login(hospitalId, doctorId, secret));
          status.textContent = `logged in as ${doctorId} @ ${hospitalId}`;
        } catch (err) {
          showError(loginSection, err);
        }
      },
    }),
  );

  session.subscribe(() => {
    renderConsentSection();
    renderQuerySection();
    renderAuditSection();
  });
  renderQuerySection();

  // Tick the countdown badge; expiry flips canQuery() and disables the
  // locate button on the next render.
  const timer = setInterval(renderQuerySection, 1000);
  return { session, stop: () => clearInterval(timer) };
}
