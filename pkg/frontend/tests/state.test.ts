import { describe, expect, it } from "vitest";

import {
  DemographicsUnresolved,
  SessionTimeline,
} from "../src/state.js";

const DEMO = { sexCode: "F", ethnicity: "Black", age: 43 };

function resolved(): SessionTimeline {
  const s = new SessionTimeline();
  s.setDemographics(DEMO);
  return s;
}

describe("demographics gate", () => {
  it("blocks concepts until sex, ethnicity, and age resolve", () => {
    const s = new SessionTimeline();
    expect(() => s.addConcept("C1", "one", "user")).toThrow(DemographicsUnresolved);
    expect(() => s.insertSep()).toThrow(DemographicsUnresolved);
    s.setDemographics({ sexCode: "F", ethnicity: null, age: 43 });
    expect(() => s.addConcept("C1", "one", "user")).toThrow(DemographicsUnresolved);
    s.setDemographics(DEMO);
    s.addConcept("C1", "one", "user");
    expect(s.spellings()).toEqual(["SEX:F", "ETH:Black", "AGE:43", "C:C1"]);
  });

  it("keeps the demographic prefix in sex, ethnicity, age order", () => {
    expect(resolved().prefixSpellings()).toEqual(["SEX:F", "ETH:Black", "AGE:43"]);
  });
});

describe("undo and redo", () => {
  it("add then undo restores the original timeline", () => {
    const s = resolved();
    const before = s.spellings();
    s.addConcept("C1", "one", "user");
    expect(s.spellings()).not.toEqual(before);
    expect(s.undo()).toBe(true);
    expect(s.spellings()).toEqual(before);
  });

  it("redo replays an undone mutation", () => {
    const s = resolved();
    s.addConcept("C1", "one", "user");
    s.undo();
    expect(s.redo()).toBe(true);
    expect(s.spellings()).toContain("C:C1");
  });

  it("a new mutation clears the redo stack", () => {
    const s = resolved();
    s.addConcept("C1", "one", "user");
    s.undo();
    s.addConcept("C2", "two", "user");
    expect(s.canRedo).toBe(false);
  });

  it("undo at the bottom of the stack is a no-op", () => {
    expect(new SessionTimeline().undo()).toBe(false);
  });
});

describe("entry editing", () => {
  it("removes and reorders entries", () => {
    const s = resolved();
    s.addConcept("C1", "one", "user");
    s.addConcept("C2", "two", "user");
    s.addConcept("C3", "three", "user");
    s.moveEntry(2, 0);
    expect(s.spellings().slice(3)).toEqual(["C:C3", "C:C1", "C:C2"]);
    s.removeEntry(1);
    expect(s.spellings().slice(3)).toEqual(["C:C3", "C:C2"]);
  });

  it("inserts separators and appends generated spans", () => {
    const s = resolved();
    s.addConcept("C1", "one", "user");
    s.insertSep();
    s.appendGenerated([{ token: "C:C9", name: "nine" }, { token: "SEP" }]);
    expect(s.spellings().slice(3)).toEqual(["C:C1", "SEP", "C:C9", "SEP"]);
    expect(s.getEntries()[2].source).toBe("generated");
  });

  it("tracks concept history for novelty badges", () => {
    const s = resolved();
    s.addConcept("C1", "one", "user");
    s.insertSep();
    s.addConcept("C2", "two", "forecast");
    expect(s.conceptHistory()).toEqual(new Set(["C1", "C2"]));
  });
});

describe("session persistence", () => {
  it("round-trips through JSON and restores the exact view", () => {
    const s = resolved();
    s.addConcept("C1", "one", "user");
    s.addConcept("C2", "two", "forecast");
    s.insertSep();
    const restored = SessionTimeline.fromJSON(
      JSON.parse(JSON.stringify(s.toJSON())),
    );
    expect(restored.spellings()).toEqual(s.spellings());
    expect(restored.getEntries()).toEqual(s.getEntries());
    expect(restored.getDemographics()).toEqual(s.getDemographics());
  });
});
