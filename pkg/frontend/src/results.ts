// Results browser shaping: rows and summaries come verbatim from the stored
// session documents; nothing is recomputed here.

import type { SessionEnvelopeDoc, SessionResultDoc } from "./types.js";

export interface PairRow {
  pairId: string;
  kind: string;
  novelMs: number | null;
  knownMs: number | null;
  fraction: number | null;
  fractionLabel: string;
}

export function pairRows(result: SessionResultDoc): PairRow[] {
  return result.per_pair
    .filter((r) => r.kind !== "both_new")
    .map((r) => ({
      pairId: r.pair_id,
      kind: r.kind,
      novelMs: r.novel_ms,
      knownMs: r.known_ms,
      fraction: r.novelty_fraction,
      fractionLabel:
        r.novelty_fraction == null ? "n/a" : `${(100 * r.novelty_fraction).toFixed(1)}%`,
    }));
}

export interface AggregateSummary {
  value: number | null;
  reference: number;
  label: string;
}

export function aggregateSummary(result: SessionResultDoc): AggregateSummary {
  return {
    value: result.novelty_preference,
    reference: result.healthy_reference,
    label:
      result.novelty_preference == null
        ? "no scored pairs"
        : `${(100 * result.novelty_preference).toFixed(1)}% (healthy reference ${(100 * result.healthy_reference).toFixed(0)}%)`,
  };
}

export function sessionBadge(envelope: SessionEnvelopeDoc): string {
  return envelope.status === "aborted" ? "partial" : "complete";
}

export function emptyStateLabel(sessions: SessionEnvelopeDoc[]): string | null {
  return sessions.length === 0 ? "no stored sessions" : null;
}
