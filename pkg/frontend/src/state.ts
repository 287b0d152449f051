/**
 * Client-side session state: the composed timeline with undo/redo.
 *
 * A timeline always starts with the three demographic tokens; concepts
 * cannot be added until the sex, ethnicity, and age pickers resolve.
 * Every mutation snapshots onto the undo stack; sessions serialize to
 * plain JSON and restore the exact view.
 */

export type TokenSource = "user" | "forecast" | "generated";

export interface TimelineEntry {
  spelling: string; // C:<id>, SEP, or DEATH
  name: string;
  source: TokenSource;
}

export interface DemographicsPick {
  sexCode: string | null; // F | M | U
  ethnicity: string | null;
  age: number | null;
}

interface Snapshot {
  demographics: DemographicsPick;
  entries: TimelineEntry[];
}

export interface SessionJson {
  demographics: DemographicsPick;
  entries: TimelineEntry[];
}

export class DemographicsUnresolved extends Error {
  constructor() {
    super("pick sex, ethnicity, and age before adding concepts");
  }
}

export class SessionTimeline {
  private demographics: DemographicsPick = {
    sexCode: null,
    ethnicity: null,
    age: null,
  };
  private entries: TimelineEntry[] = [];
  private undoStack: Snapshot[] = [];
  private redoStack: Snapshot[] = [];

  // -- snapshots -----------------------------------------------------------

  private snapshot(): Snapshot {
    return {
      demographics: { ...this.demographics },
      entries: this.entries.map((e) => ({ ...e })),
    };
  }

  private restore(s: Snapshot): void {
    this.demographics = { ...s.demographics };
    this.entries = s.entries.map((e) => ({ ...e }));
  }

  private commit(mutate: () => void): void {
    this.undoStack.push(this.snapshot());
    this.redoStack = [];
    mutate();
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.redoStack.push(this.snapshot());
    this.restore(prev);
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (!next) return false;
    this.undoStack.push(this.snapshot());
    this.restore(next);
    return true;
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  get canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  // -- demographics --------------------------------------------------------

  demographicsResolved(): boolean {
    const d = this.demographics;
    return d.sexCode !== null && d.ethnicity !== null && d.age !== null;
  }

  getDemographics(): DemographicsPick {
    return { ...this.demographics };
  }

  setDemographics(pick: DemographicsPick): void {
    this.commit(() => {
      this.demographics = { ...pick };
    });
  }

  // -- entries -------------------------------------------------------------

  private requireResolved(): void {
    if (!this.demographicsResolved()) throw new DemographicsUnresolved();
  }

  addConcept(conceptId: string, name: string, source: TokenSource): void {
    this.requireResolved();
    this.commit(() => {
      this.entries.push({ spelling: `C:${conceptId}`, name, source });
    });
  }

  insertSep(): void {
    this.requireResolved();
    this.commit(() => {
      this.entries.push({ spelling: "SEP", name: "", source: "user" });
    });
  }

  appendGenerated(items: { token: string; name?: string }[]): void {
    this.requireResolved();
    this.commit(() => {
      for (const item of items) {
        this.entries.push({
          spelling: item.token,
          name: item.name ?? "",
          source: "generated",
        });
      }
    });
  }

  removeEntry(index: number): void {
    if (index < 0 || index >= this.entries.length) return;
    this.commit(() => {
      this.entries.splice(index, 1);
    });
  }

  moveEntry(from: number, to: number): void {
    const n = this.entries.length;
    if (from < 0 || from >= n || to < 0 || to >= n || from === to) return;
    this.commit(() => {
      const [entry] = this.entries.splice(from, 1);
      this.entries.splice(to, 0, entry);
    });
  }

  clearEntries(): void {
    this.commit(() => {
      this.entries = [];
    });
  }

  // -- views ---------------------------------------------------------------

  /** Demographic prefix spellings, empty until resolved. */
  prefixSpellings(): string[] {
    if (!this.demographicsResolved()) return [];
    const d = this.demographics;
    return [`SEX:${d.sexCode}`, `ETH:${d.ethnicity}`, `AGE:${d.age}`];
  }

  getEntries(): readonly TimelineEntry[] {
    return this.entries;
  }

  /** Full token spellings as the service expects them. */
  spellings(): string[] {
    return [...this.prefixSpellings(), ...this.entries.map((e) => e.spelling)];
  }

  /** Concepts already on the timeline, for novelty badges. */
  conceptHistory(): Set<string> {
    const out = new Set<string>();
    for (const e of this.entries) {
      if (e.spelling.startsWith("C:")) out.add(e.spelling.slice(2));
    }
    return out;
  }

  // -- persistence ---------------------------------------------------------

  toJSON(): SessionJson {
    return this.snapshot();
  }

  static fromJSON(obj: SessionJson): SessionTimeline {
    const session = new SessionTimeline();
    session.demographics = { ...obj.demographics };
    session.entries = obj.entries.map((e) => ({ ...e }));
    return session;
  }
}
