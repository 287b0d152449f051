/**
 * Relevancy judgements for forecast panels: capture, JSONL export/import,
 * and the percent-relevant-by-rank summary view.
 */

export type Judgement = "relevant" | "irrelevant" | "unsure";

export interface RelevancyRecord {
  timeline: string[]; // token spellings at judgement time
  candidates: string[]; // concept ids in displayed rank order
  judgements: Judgement[]; // exactly one per displayed candidate
  rater: string;
  timestamp: string; // ISO-8601
}

export interface RankSummaryRow {
  rank: number; // 1-based display position
  shown: number;
  relevant: number;
  percentRelevant: number | null;
}

const JUDGEMENTS: ReadonlySet<string> = new Set([
  "relevant",
  "irrelevant",
  "unsure",
]);

export function validateRecord(record: RelevancyRecord): void {
  if (record.judgements.length !== record.candidates.length) {
    throw new Error(
      `one judgement per candidate: got ${record.judgements.length} ` +
        `for ${record.candidates.length}`,
    );
  }
  for (const j of record.judgements) {
    if (!JUDGEMENTS.has(j)) throw new Error(`unknown judgement ${j}`);
  }
  if (!record.rater) throw new Error("rater id is required");
}

export class RelevancyLog {
  constructor(readonly records: RelevancyRecord[] = []) {}

  add(record: RelevancyRecord): void {
    validateRecord(record);
    this.records.push(record);
  }

  /** One JSON object per line; empty log exports an empty string. */
  exportJsonl(): string {
    return this.records.map((r) => JSON.stringify(r)).join("\n") + (this.records.length ? "\n" : "");
  }

  static importJsonl(text: string): RelevancyLog {
    const log = new RelevancyLog();
    for (const line of text.split("\n")) {
      if (!line.trim()) continue;
      log.add(JSON.parse(line) as RelevancyRecord);
    }
    return log;
  }

  /** Percent relevant per displayed rank across all records. */
  rankSummary(): RankSummaryRow[] {
    const shown: number[] = [];
    const relevant: number[] = [];
    for (const record of this.records) {
      record.judgements.forEach((j, i) => {
        shown[i] = (shown[i] ?? 0) + 1;
        relevant[i] = (relevant[i] ?? 0) + (j === "relevant" ? 1 : 0);
      });
    }
    return shown.map((n, i) => ({
      rank: i + 1,
      shown: n,
      relevant: relevant[i],
      percentRelevant: n ? (100 * relevant[i]) / n : null,
    }));
  }
}
