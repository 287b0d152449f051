/**
 * Explorer app wiring: compose a timeline, inspect typed top-k forecasts
 * with saliency, steer by appending candidates, simulate forward, and
 * record relevancy judgements. All model math comes from the service.
 */

import { ApiError, Client, type Candidate, type VocabMatch } from "./api.js";
import { RelevancyLog, type Judgement } from "./relevancy.js";
import {
  candidatePanelHtml,
  generatedSpanHtml,
  rankSummaryHtml,
  saliencyLegendHtml,
  timelineHtml,
} from "./render.js";
import { DemographicsUnresolved, SessionTimeline } from "./state.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let session = new SessionTimeline();
let relevancy = new RelevancyLog();
let client = new Client(readBaseUrl());
let lastCandidates: Candidate[] = [];
let saliencyScores: number[] | undefined;
let searchMatches: VocabMatch[] = [];

function readBaseUrl(): string {
  return ($("base-url") as HTMLInputElement).value.replace(/\/$/, "");
}

function setStatus(text: string, isError = false): void {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  if (err instanceof DOMException && err.name === "AbortError") return "";
  return String(err);
}

// -- timeline rendering ------------------------------------------------------

function renderTimeline(): void {
  $("timeline").innerHTML = timelineHtml(
    session.prefixSpellings(),
    session.getEntries(),
    saliencyScores,
  );
  ($("undo") as HTMLButtonElement).disabled = !session.canUndo;
  ($("redo") as HTMLButtonElement).disabled = !session.canRedo;
}

async function timelineChanged(): Promise<void> {
  saliencyScores = undefined;
  renderTimeline();
  if (session.demographicsResolved()) {
    await refreshForecasts();
  }
}

// -- demographics ------------------------------------------------------------

function applyDemographics(): void {
  const sex = ($("pick-sex") as HTMLSelectElement).value;
  const eth = ($("pick-ethnicity") as HTMLSelectElement).value;
  const age = ($("pick-age") as HTMLInputElement).value;
  if (!sex || !eth || age === "") {
    setStatus("resolve sex, ethnicity, and age before adding concepts", true);
    return;
  }
  session.setDemographics({
    sexCode: sex,
    ethnicity: eth,
    age: Number(age),
  });
  setStatus("demographics set");
  void timelineChanged();
}

// -- forecasts and the steer loop ---------------------------------------------

async function refreshForecasts(): Promise<void> {
  const typeFilter = ($("filter-type") as HTMLSelectElement).value;
  const noveltyFilter = ($("filter-novelty") as HTMLSelectElement).value;
  const k = Number(($("filter-k") as HTMLInputElement).value) || 10;
  try {
    const response = await client.forecast({
      items: session.spellings(),
      k,
      ...(typeFilter ? { type: typeFilter } : {}),
      ...(noveltyFilter ? { novelty: noveltyFilter as "new" | "recurring" } : {}),
    });
    lastCandidates = response.candidates;
    $("candidates").innerHTML = candidatePanelHtml(lastCandidates);
    renderRelevancyControls();
    setStatus(`${lastCandidates.length} candidates`);
  } catch (err) {
    const msg = describeError(err);
    if (msg) setStatus(msg, true);
  }
}

function candidateFromElement(el: HTMLElement): Candidate | undefined {
  const id = el.dataset.concept;
  return lastCandidates.find((c) => c.concept === id);
}

async function onCandidateClick(event: Event): Promise<void> {
  const row = (event.target as HTMLElement).closest<HTMLElement>(".candidate");
  if (!row) return;
  const candidate = candidateFromElement(row);
  if (!candidate) return;
  try {
    session.addConcept(candidate.concept, candidate.name, "forecast");
  } catch (err) {
    if (err instanceof DemographicsUnresolved) {
      setStatus(err.message, true);
      return;
    }
    throw err;
  }
  await timelineChanged(); // the steer loop: append, then fresh forecasts
}

async function onCandidateHover(event: Event): Promise<void> {
  const row = (event.target as HTMLElement).closest<HTMLElement>(".candidate");
  if (!row) return;
  const candidate = candidateFromElement(row);
  if (!candidate) return;
  try {
    const response = await client.saliency(
      session.spellings(),
      `C:${candidate.concept}`,
    );
    saliencyScores = response.scores;
    $("saliency-legend").innerHTML = saliencyLegendHtml(
      response.scores,
      candidate.name,
    );
    renderTimeline();
  } catch (err) {
    const msg = describeError(err);
    if (msg) setStatus(msg, true);
  }
}

// -- concept search ------------------------------------------------------------

async function onSearchInput(): Promise<void> {
  const query = ($("search") as HTMLInputElement).value;
  if (query.length < 1) return;
  try {
    searchMatches = await client.vocab(query);
    const list = $("search-results");
    list.innerHTML = searchMatches
      .map(
        (m, i) =>
          `<li data-i="${i}"><span class="cand-name">${m.name}</span>` +
          `<span class="badge badge-type">${m.type ?? "?"}</span></li>`,
      )
      .join("");
  } catch (err) {
    const msg = describeError(err);
    if (msg) setStatus(msg, true);
  }
}

function onSearchPick(event: Event): void {
  const item = (event.target as HTMLElement).closest<HTMLElement>("li[data-i]");
  if (!item) return;
  const match = searchMatches[Number(item.dataset.i)];
  if (!match) return;
  try {
    session.addConcept(match.concept, match.name, "user");
  } catch (err) {
    if (err instanceof DemographicsUnresolved) {
      setStatus(err.message, true);
      return;
    }
    throw err;
  }
  ($("search") as HTMLInputElement).value = "";
  $("search-results").innerHTML = "";
  void timelineChanged();
}

// -- simulation -----------------------------------------------------------------

let lastSeed = 1;

async function simulate(reroll = false): Promise<void> {
  if (!session.demographicsResolved()) {
    setStatus("resolve demographics first", true);
    return;
  }
  const steps = Number(($("sim-steps") as HTMLInputElement).value) || 15;
  const topK = Number(($("sim-topk") as HTMLInputElement).value) || 100;
  if (reroll) lastSeed += 1;
  try {
    const response = await client.generate({
      items: session.spellings(),
      top_k: topK,
      seed: lastSeed,
      max_new_tokens: steps,
    });
    $("generated").innerHTML = generatedSpanHtml(response.items);
    const fresh = response.items.filter((i) => i.source === "generated");
    $("sim-meta").textContent =
      `${fresh.length} generated tokens (seed ${response.seed}, top-k ${response.top_k})`;
  } catch (err) {
    const msg = describeError(err);
    if (msg) setStatus(msg, true);
  }
}

function adoptGenerated(): void {
  const chips = Array.from(
    $("generated").querySelectorAll<HTMLElement>('[data-source="generated"]'),
  );
  if (!chips.length) return;
  session.appendGenerated(
    chips.map((chip) => ({ token: chip.dataset.token ?? "", name: chip.textContent ?? "" })),
  );
  $("generated").innerHTML = "";
  $("sim-meta").textContent = "";
  void timelineChanged();
}

// -- relevancy capture -------------------------------------------------------------

function renderRelevancyControls(): void {
  const host = $("relevancy-controls");
  if (!lastCandidates.length) {
    host.innerHTML = "";
    return;
  }
  host.innerHTML = lastCandidates
    .map(
      (c, i) =>
        `<div class="judge-row"><span class="cand-name">${i + 1}. ${c.name}</span>` +
        ["relevant", "irrelevant", "unsure"]
          .map(
            (j) =>
              `<label><input type="radio" name="judge-${i}" value="${j}"` +
              `${j === "unsure" ? " checked" : ""}>${j}</label>`,
          )
          .join("") +
        `</div>`,
    )
    .join("");
}

function recordJudgements(): void {
  if (!lastCandidates.length) {
    setStatus("no candidate panel to judge", true);
    return;
  }
  const rater = ($("rater") as HTMLInputElement).value.trim();
  if (!rater) {
    setStatus("enter a rater id before recording", true);
    return;
  }
  const judgements: Judgement[] = lastCandidates.map((_, i) => {
    const checked = document.querySelector<HTMLInputElement>(
      `input[name="judge-${i}"]:checked`,
    );
    return (checked?.value ?? "unsure") as Judgement;
  });
  relevancy.add({
    timeline: session.spellings(),
    candidates: lastCandidates.map((c) => c.concept),
    judgements,
    rater,
    timestamp: new Date().toISOString(),
  });
  $("rank-summary").innerHTML = rankSummaryHtml(relevancy.rankSummary());
  setStatus(`${relevancy.records.length} relevancy records`);
}

// -- import/export -------------------------------------------------------------------

function download(filename: string, text: string, type = "application/json"): void {
  const blob = new Blob([text], { type });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}

function exportSession(): void {
  download("session.json", JSON.stringify(session.toJSON(), null, 2));
}

function importSession(file: File): void {
  void file.text().then((text) => {
    session = SessionTimeline.fromJSON(JSON.parse(text));
    void timelineChanged();
    setStatus("session restored");
  });
}

function exportRelevancy(): void {
  download("relevancy.jsonl", relevancy.exportJsonl(), "application/jsonl");
}

function importRelevancy(file: File): void {
  void file.text().then((text) => {
    relevancy = RelevancyLog.importJsonl(text);
    $("rank-summary").innerHTML = rankSummaryHtml(relevancy.rankSummary());
    setStatus(`${relevancy.records.length} relevancy records loaded`);
  });
}

// -- wiring ------------------------------------------------------------------------

function wire(): void {
  $("apply-demo").addEventListener("click", applyDemographics);
  $("base-url").addEventListener("change", () => {
    client = new Client(readBaseUrl());
    void client
      .health()
      .then((h) => setStatus(`connected: model ${h.model_version}`))
      .catch((err) => setStatus(describeError(err), true));
  });
  $("candidates").addEventListener("click", (e) => void onCandidateClick(e));
  $("candidates").addEventListener("mouseover", (e) => void onCandidateHover(e));
  $("search").addEventListener("input", () => void onSearchInput());
  $("search-results").addEventListener("click", onSearchPick);
  $("insert-sep").addEventListener("click", () => {
    try {
      session.insertSep();
      void timelineChanged();
    } catch (err) {
      if (err instanceof DemographicsUnresolved) setStatus(err.message, true);
    }
  });
  $("timeline").addEventListener("click", (event) => {
    const btn = (event.target as HTMLElement).closest<HTMLElement>("[data-remove]");
    if (!btn) return;
    session.removeEntry(Number(btn.dataset.remove));
    void timelineChanged();
  });
  let dragFrom: number | null = null;
  $("timeline").addEventListener("dragstart", (event) => {
    const chip = (event.target as HTMLElement).closest<HTMLElement>("[data-index]");
    dragFrom = chip ? Number(chip.dataset.index) : null;
  });
  $("timeline").addEventListener("dragover", (event) => event.preventDefault());
  $("timeline").addEventListener("drop", (event) => {
    event.preventDefault();
    const chip = (event.target as HTMLElement).closest<HTMLElement>("[data-index]");
    if (chip && dragFrom !== null) {
      session.moveEntry(dragFrom, Number(chip.dataset.index));
      void timelineChanged();
    }
    dragFrom = null;
  });
  $("undo").addEventListener("click", () => {
    if (session.undo()) void timelineChanged();
  });
  $("redo").addEventListener("click", () => {
    if (session.redo()) void timelineChanged();
  });
  $("refresh").addEventListener("click", () => void refreshForecasts());
  $("simulate").addEventListener("click", () => void simulate(false));
  $("reroll").addEventListener("click", () => void simulate(true));
  $("adopt").addEventListener("click", adoptGenerated);
  $("record").addEventListener("click", recordJudgements);
  $("export-session").addEventListener("click", exportSession);
  $("export-relevancy").addEventListener("click", exportRelevancy);
  ($("import-session") as HTMLInputElement).addEventListener("change", (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) importSession(file);
  });
  ($("import-relevancy") as HTMLInputElement).addEventListener("change", (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) importRelevancy(file);
  });
  void client
    .health()
    .then((h) => setStatus(`connected: model ${h.model_version}`))
    .catch(() => setStatus("service unreachable; set the base URL", true));
  renderTimeline();
}

wire();
