/** Date and display formatting at the client boundary.
 *
 * The services speak RFC 3339 with explicit offsets; HTML date/time
 * inputs speak "yyyy-MM-dd" and "HH:mm". Conversion happens here, once.
 */

const DATE_RE = /^\d{4}-\d{2}-\d{2}$/;
const TIME_RE = /^\d{2}:\d{2}$/;
const OFFSET_RE = /^[+-]\d{2}:\d{2}$|^Z$/;

/** Clinic-local offset used when the operator does not pick one. */
export const DEFAULT_OFFSET = "+08:00";

export function toRfc3339(
  date: string,
  time: string = "00:00",
  offset: string = DEFAULT_OFFSET,
): string {
  if (!DATE_RE.test(date)) throw new Error(`bad date ${JSON.stringify(date)}`);
  if (!TIME_RE.test(time)) throw new Error(`bad time ${JSON.stringify(time)}`);
  if (!OFFSET_RE.test(offset)) throw new Error(`bad offset ${JSON.stringify(offset)}`);
  return `${date}T${time}:00${offset}`;
}

/** End of day for inclusive "to" bounds built from a date input. */
export function endOfDayRfc3339(date: string, offset: string = DEFAULT_OFFSET): string {
  if (!DATE_RE.test(date)) throw new Error(`bad date ${JSON.stringify(date)}`);
  if (!OFFSET_RE.test(offset)) throw new Error(`bad offset ${JSON.stringify(offset)}`);
  return `${date}T23:59:59${offset}`;
}

/** "mm:ss" countdown string for the consent expiry badge. */
export function countdown(seconds: number): string {
  const clamped = Math.max(0, seconds);
  const m = Math.floor(clamped / 60);
  const s = clamped % 60;
  return `${String(m).padStart(2, "0")}:${String(s).padStart(2, "0")}`;
}

/** Date part of an RFC 3339 timestamp, for the date-wise result list. */
export function datePart(rfc3339: string): string {
  return rfc3339.slice(0, 10);
}
