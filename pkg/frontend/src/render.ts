/**
 * Pure HTML string builders. Every model-derived number is written both
 * into a data attribute verbatim (String of the payload value) and into
 * the visible text as a fixed formatting of that same value, so contract
 * tests can confirm nothing is recomputed locally.
 */

import type { Candidate, GeneratedItem } from "./api.js";
import type { TimelineEntry } from "./state.js";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function formatProbability(p: number): string {
  return p.toPrecision(3);
}

export function formatWeight(w: number): string {
  return w.toFixed(4);
}

export function prefixChipsHtml(prefix: string[]): string {
  return prefix
    .map(
      (s) =>
        `<span class="chip chip-demo" data-token="${esc(s)}">${esc(s)}</span>`,
    )
    .join("");
}

export function entryChipHtml(
  entry: TimelineEntry,
  index: number,
  saliency?: number,
): string {
  const classes = ["chip", `chip-${entry.source}`];
  if (entry.spelling === "SEP") classes.push("chip-sep");
  const label =
    entry.spelling === "SEP"
      ? "⸻"
      : entry.name
        ? `${esc(entry.name)}`
        : esc(entry.spelling);
  const heat =
    saliency === undefined
      ? ""
      : ` style="--heat:${Math.min(1, saliency).toFixed(4)}"` +
        ` data-weight="${String(saliency)}"` +
        ` title="weight ${formatWeight(saliency)}"`;
  return (
    `<span class="${classes.join(" ")}" data-index="${index}" draggable="true"` +
    ` data-token="${esc(entry.spelling)}"${heat}>` +
    `${label}<button class="chip-remove" data-remove="${index}">×</button></span>`
  );
}

export function timelineHtml(
  prefix: string[],
  entries: readonly TimelineEntry[],
  saliency?: number[],
): string {
  // saliency scores align to prefix + entries, in service token order
  const chips = [prefixChipsHtml(prefix)];
  entries.forEach((entry, i) => {
    const score = saliency ? saliency[prefix.length + i] : undefined;
    chips.push(entryChipHtml(entry, i, score));
  });
  return chips.join("");
}

export function candidateRowHtml(c: Candidate, rank: number): string {
  const width = Math.max(1, Math.round(c.probability * 100));
  return (
    `<div class="candidate" data-concept="${esc(c.concept)}"` +
    ` data-probability="${String(c.probability)}" data-rank="${rank}">` +
    `<span class="rank">${rank}</span>` +
    `<span class="cand-name" title="${esc(c.concept)}">${esc(c.name)}</span>` +
    `<span class="badge badge-${c.novelty}">${c.novelty}</span>` +
    `<span class="badge badge-type">${esc(c.type ?? "?")}</span>` +
    `<span class="bar"><span class="bar-fill" style="width:${width}%"></span></span>` +
    `<span class="prob">${formatProbability(c.probability)}</span>` +
    `</div>`
  );
}

export function candidatePanelHtml(candidates: Candidate[]): string {
  if (!candidates.length) {
    return `<div class="empty">no eligible candidates</div>`;
  }
  const groups = new Map<string, Candidate[]>();
  candidates.forEach((c) => {
    const key = c.type ?? "?";
    if (!groups.has(key)) groups.set(key, []);
    groups.get(key)!.push(c);
  });
  const sections: string[] = [];
  for (const [type, group] of groups) {
    sections.push(`<h3 class="group-head">${esc(type)}</h3>`);
    sections.push(
      group
        .map((c) => candidateRowHtml(c, candidates.indexOf(c) + 1))
        .join(""),
    );
  }
  return sections.join("");
}

export function generatedSpanHtml(items: GeneratedItem[]): string {
  return items
    .map((item) => {
      const cls = item.source === "generated" ? "chip chip-generated" : "chip chip-prompt";
      const label = item.name ? esc(item.name) : esc(item.token);
      return `<span class="${cls}" data-token="${esc(item.token)}" data-source="${item.source}">${label}</span>`;
    })
    .join("");
}

export function saliencyLegendHtml(scores: number[], target: string): string {
  const total = scores.reduce((a, b) => a + b, 0);
  return (
    `<span class="legend" data-total="${String(total)}">` +
    `saliency for ${esc(target)} · weights sum ${formatWeight(total)}</span>`
  );
}

export function rankSummaryHtml(
  rows: { rank: number; shown: number; relevant: number; percentRelevant: number | null }[],
): string {
  if (!rows.length) return `<div class="empty">no judgements recorded</div>`;
  const cells = rows
    .map(
      (r) =>
        `<tr><td>${r.rank}</td><td>${r.relevant}/${r.shown}</td>` +
        `<td>${r.percentRelevant === null ? "-" : r.percentRelevant.toFixed(0) + "%"}</td></tr>`,
    )
    .join("");
  return (
    `<table class="rank-summary"><thead><tr><th>rank</th><th>relevant</th>` +
    `<th>%</th></tr></thead><tbody>${cells}</tbody></table>`
  );
}
