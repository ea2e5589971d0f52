/** In-memory session state for a single operator.
 *
 * Tokens live only in this object: nothing here (or anywhere else in
 * the console) writes to localStorage, sessionStorage, cookies, or
 * IndexedDB. The raw ID-card scan is handed straight to the consent
 * endpoint and never stored; after the grant the session keeps only the
 * opaque consent token and the patient digest decoded from it.
 */

import { decodeClaims } from "./api.js";

export interface SessionSnapshot {
  doctorId: string | null;
  doctorRole: string | null;
  doctorToken: string | null;
  consentToken: string | null;
  consentPatientRef: string | null;
  consentExpiresAt: number | null; // epoch milliseconds
}

type Listener = (snapshot: SessionSnapshot) => void;

export class SessionStore {
  private doctorId: string | null = null;
  private doctorRole: string | null = null;
  private doctorToken: string | null = null;
  private consentToken: string | null = null;
  private consentPatientRef: string | null = null;
  private consentExpiresAt: number | null = null;
  private listeners: Listener[] = [];

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    const snapshot = this.snapshot();
    for (const listener of this.listeners) listener(snapshot);
  }

  snapshot(): SessionSnapshot {
    return {
      doctorId: this.doctorId,
      doctorRole: this.doctorRole,
      doctorToken: this.doctorToken,
      consentToken: this.consentToken,
      consentPatientRef: this.consentPatientRef,
      consentExpiresAt: this.consentExpiresAt,
    };
  }

  loginSucceeded(token: string): void {
    const claims = decodeClaims(token);
    this.doctorToken = token;
    this.doctorId = String(claims.sub ?? "");
    this.doctorRole = String(claims.role ?? "");
    this.emit();
  }

  consentGranted(token: string): void {
    const claims = decodeClaims(token);
    this.consentToken = token;
    this.consentPatientRef = String(claims.patient_ref ?? "");
    this.consentExpiresAt = Number(claims.exp) * 1000;
    this.emit();
  }

  /** Seconds until the active consent expires; 0 if absent or expired. */
  consentRemaining(now: number = Date.now()): number {
    if (this.consentExpiresAt === null) return 0;
    return Math.max(0, Math.floor((this.consentExpiresAt - now) / 1000));
  }

  isLoggedIn(): boolean {
    return this.doctorToken !== null;
  }

  isAdmin(): boolean {
    return this.doctorRole === "admin";
  }

  /** Queries need a doctor token and a consent token that has not
   * expired yet. */
  canQuery(now: number = Date.now()): boolean {
    return this.doctorToken !== null && this.consentToken !== null && this.consentRemaining(now) > 0;
  }

  dropConsent(): void {
    this.consentToken = null;
    this.consentPatientRef = null;
    this.consentExpiresAt = null;
    this.emit();
  }

  logout(): void {
    this.doctorId = null;
    this.doctorRole = null;
    this.doctorToken = null;
    this.dropConsent();
  }
}
