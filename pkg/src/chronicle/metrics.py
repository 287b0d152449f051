"""Time-windowed, type-filtered, novelty-filtered top-k forecasting metrics.

A forecast for position j is scored by teacher forcing: the model reads
the true prefix, its distribution is filtered to concepts matching the
ground truth's type and novelty, and each of the top k candidates counts
as a true positive iff the patient's filtered event history contains it
inside [t_j, t_j + range]. A miss of the ground truth itself from the top
k increments that concept's false negatives.

``reference_evaluate`` recomputes every report from the same model
distributions with naive scans and shares no bookkeeping code with
``evaluate``; the pair must agree field for field.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field as dataclass_field
from datetime import date, timedelta
from typing import Sequence

import numpy as np

from . import nn
from .model import Model, Vocab
from .timeline import Timeline
from .tokens import TokenKind

TYPE_GROUPS: dict[str, str] = {
    "Disorders": "Disorder",
    "Findings": "Finding",
    "Substances": "Substance",
    "Procedures": "Procedure",
}

NEW = "new"
RECURRING = "recurring"

CellKey = tuple[str, int | None, int, str]  # (group, range_days or None, k, novelty)


@dataclass(frozen=True)
class EvalConfig:
    time_ranges: tuple[int | None, ...] = (30, 365, None)  # None means unbounded
    top_ks: tuple[int, ...] = (1, 5, 10)
    type_groups: tuple[str, ...] = (
        "All",
        "Disorders",
        "Findings",
        "Substances",
        "Procedures",
    )
    novelty_modes: tuple[str, ...] = (NEW, RECURRING)

    def __post_init__(self) -> None:
        if not (self.time_ranges and self.top_ks and self.type_groups and self.novelty_modes):
            raise ValueError("evaluation grids must be nonempty")
        if any(r is not None and r <= 0 for r in self.time_ranges):
            raise ValueError("time ranges must be positive or None")
        if any(k < 1 for k in self.top_ks):
            raise ValueError("top-k values must be at least 1")
        for g in self.type_groups:
            if g != "All" and g not in TYPE_GROUPS:
                raise ValueError(f"unknown type group {g!r}")
        for m in self.novelty_modes:
            if m not in (NEW, RECURRING):
                raise ValueError(f"unknown novelty mode {m!r}")


@dataclass
class Cell:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_concept: dict[str, list[int]] = dataclass_field(default_factory=dict)

    def _tally(self, concept: str) -> list[int]:
        return self.per_concept.setdefault(concept, [0, 0, 0])

    def add_tp(self, concept: str) -> None:
        self.tp += 1
        self._tally(concept)[0] += 1

    def add_fp(self, concept: str) -> None:
        self.fp += 1
        self._tally(concept)[1] += 1

    def add_fn(self, concept: str) -> None:
        self.fn += 1
        self._tally(concept)[2] += 1

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None


@dataclass
class MetricsReport:
    config: EvalConfig
    cells: dict[CellKey, Cell]
    n_positions: int = 0

    @classmethod
    def empty(cls, ec: EvalConfig) -> "MetricsReport":
        cells = {
            (g, r, k, m): Cell()
            for g in ec.type_groups
            for r in ec.time_ranges
            for k in ec.top_ks
            for m in ec.novelty_modes
        }
        return cls(config=ec, cells=cells)


def group_of_type(type_name: str | None) -> str | None:
    for group, t in TYPE_GROUPS.items():
        if t == type_name:
            return group
    return None


def candidate_filter(
    dist: np.ndarray,
    vocab: Vocab,
    gt_type: str | None,
    novelty: str | None,
    history: set[str],
    k: int,
) -> list[str]:
    """Top-k concept candidates after type and novelty filtering.

    Ranked by probability descending with ties broken by concept id
    ascending. ``gt_type=None`` admits every concept type; ``novelty``
    None skips the history filter.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    ids, idxs, types = _concept_table(vocab)
    mask = np.ones(len(ids), dtype=bool)
    if gt_type is not None:
        mask &= types == gt_type
    if novelty is not None:
        in_hist = np.array([c in history for c in ids], dtype=bool)
        mask &= in_hist if novelty == RECURRING else ~in_hist
    chosen = np.nonzero(mask)[0]
    if chosen.size == 0:
        return []
    probs = dist[idxs[chosen]]
    order = np.argsort(-probs, kind="stable")[:k]  # stable keeps id-ascending ties
    return [ids[i] for i in chosen[order]]


def _concept_table(vocab: Vocab) -> tuple[list[str], np.ndarray, np.ndarray]:
    cached = getattr(vocab, "_concept_table", None)
    if cached is not None:
        return cached
    pairs = sorted(
        (vocab.concept_id(i), i) for i in range(len(vocab)) if vocab.is_concept(i)
    )
    ids = [c for c, _ in pairs]
    idxs = np.array([i for _, i in pairs], dtype=np.int64)
    types = np.array([vocab.concept_types.get(f"C:{c}") for c in ids], dtype=object)
    table = (ids, idxs, types)
    vocab._concept_table = table
    return table


@dataclass
class _PatientIndex:
    """Occurrence dates per concept for window and novelty lookups."""

    dates_by_concept: dict[str, list[date]]
    first_occurrence: dict[str, date]

    @classmethod
    def build(cls, events: list[tuple[str, date]]) -> "_PatientIndex":
        dates: dict[str, list[date]] = {}
        for c, t in events:
            dates.setdefault(c, []).append(t)
        for lst in dates.values():
            lst.sort()
        return cls(dates, {c: lst[0] for c, lst in dates.items()})

    def history_before(self, t: date) -> set[str]:
        return {c for c, t0 in self.first_occurrence.items() if t0 < t}

    def occurs_within(self, concept: str, start: date, range_days: int | None) -> bool:
        lst = self.dates_by_concept.get(concept)
        if not lst:
            return False
        i = bisect_left(lst, start)
        if i == len(lst):
            return False
        if range_days is None:
            return True
        return lst[i] <= start + timedelta(days=range_days)


def _eval_positions(model: Model, tl: Timeline):
    """Yield (j, concept, t_j, dist) for every in-vocab concept target."""
    ids = model.vocab.encode_timeline(tl)
    logits = model.forward(ids)
    for j in range(1, len(tl.items)):
        token = tl.items[j].token
        if token.kind is not TokenKind.CONCEPT or ids[j] == model.vocab.UNK:
            continue
        yield j, token.value, tl.items[j].t, nn.softmax(logits[j - 1])


def evaluate(
    model: Model,
    test: Sequence[Timeline],
    histories: dict[str, list[tuple[str, date]]],
    ec: EvalConfig = EvalConfig(),
) -> MetricsReport:
    """Score every concept target of every test fragment against the
    patient's full filtered history (pre-split)."""
    report = MetricsReport.empty(ec)
    max_k = max(ec.top_ks)
    indexes: dict[str, _PatientIndex] = {}

    for tl in test:
        index = indexes.get(tl.patient_id)
        if index is None:
            index = _PatientIndex.build(histories[tl.patient_id])
            indexes[tl.patient_id] = index
        for _, concept, t_j, dist in _eval_positions(model, tl):
            gt_type = model.vocab.concept_types.get(f"C:{concept}")
            hist = index.history_before(t_j)
            novelty = RECURRING if concept in hist else NEW
            if novelty not in ec.novelty_modes:
                continue
            groups = [g for g in ("All", group_of_type(gt_type)) if g in ec.type_groups]
            if not groups:
                continue
            report.n_positions += 1
            ranked = candidate_filter(dist, model.vocab, gt_type, novelty, hist, max_k)
            in_window = {
                (c, r): index.occurs_within(c, t_j, r)
                for c in ranked
                for r in ec.time_ranges
            }
            for k in ec.top_ks:
                top = ranked[:k]
                for r in ec.time_ranges:
                    for g in groups:
                        cell = report.cells[(g, r, k, novelty)]
                        for c in top:
                            if in_window[(c, r)]:
                                cell.add_tp(c)
                            else:
                                cell.add_fp(c)
                        if concept not in top:
                            cell.add_fn(concept)
    return report


def reference_evaluate(
    model: Model,
    test: Sequence[Timeline],
    histories: dict[str, list[tuple[str, date]]],
    ec: EvalConfig = EvalConfig(),
) -> MetricsReport:
    """Naive re-implementation used as an oracle: plain-python filtering,
    sorting, and linear window scans over the raw event lists."""
    counts: dict[CellKey, dict[str, int]] = {}
    per_concept: dict[CellKey, dict[str, list[int]]] = {}
    for g in ec.type_groups:
        for r in ec.time_ranges:
            for k in ec.top_ks:
                for m in ec.novelty_modes:
                    counts[(g, r, k, m)] = {"tp": 0, "fp": 0, "fn": 0}
                    per_concept[(g, r, k, m)] = {}
    n_positions = 0

    concept_spellings = [s for s in model.vocab.spellings if s.startswith("C:")]

    for tl in test:
        events = histories[tl.patient_id]
        ids = model.vocab.encode_timeline(tl)
        logits = model.forward(ids)
        for j in range(1, len(tl.items)):
            token = tl.items[j].token
            if token.kind is not TokenKind.CONCEPT:
                continue
            if ids[j] == model.vocab.UNK:
                continue
            g_concept = token.value
            t_j = tl.items[j].t
            gt_type = model.vocab.concept_types.get(f"C:{g_concept}")
            seen_before = any(c == g_concept and t < t_j for c, t in events)
            novelty = RECURRING if seen_before else NEW
            if novelty not in ec.novelty_modes:
                continue
            groups = ["All"] if "All" in ec.type_groups else []
            for group, tname in TYPE_GROUPS.items():
                if tname == gt_type and group in ec.type_groups:
                    groups.append(group)
            if not groups:
                continue
            n_positions += 1

            dist = nn.softmax(logits[j - 1])
            scored = []
            for s in concept_spellings:
                cid = s[2:]
                if model.vocab.concept_types.get(s) != gt_type:
                    continue
                had = any(c == cid and t < t_j for c, t in events)
                if (novelty == RECURRING) != had:
                    continue
                scored.append((-float(dist[model.vocab.index[s]]), cid))
            scored.sort()

            for k in ec.top_ks:
                top = [cid for _, cid in scored[:k]]
                for r in ec.time_ranges:
                    for group in groups:
                        key = (group, r, k, novelty)
                        cell = counts[key]
                        tallies = per_concept[key]
                        for cid in top:
                            hit = False
                            for c, t in events:
                                if c != cid or t < t_j:
                                    continue
                                if r is None or t <= t_j + timedelta(days=r):
                                    hit = True
                                    break
                            row = tallies.setdefault(cid, [0, 0, 0])
                            if hit:
                                cell["tp"] += 1
                                row[0] += 1
                            else:
                                cell["fp"] += 1
                                row[1] += 1
                        if g_concept not in top:
                            cell["fn"] += 1
                            tallies.setdefault(g_concept, [0, 0, 0])[2] += 1

    report = MetricsReport.empty(ec)
    report.n_positions = n_positions
    for key, c in counts.items():
        report.cells[key] = Cell(
            tp=c["tp"], fp=c["fp"], fn=c["fn"], per_concept=per_concept[key]
        )
    return report


def per_concept_breakdown(
    report: MetricsReport,
    top_n: int,
    novelty: str,
    group: str = "All",
    time_range: int | None = 30,
    top_k: int = 10,
) -> tuple[list[tuple[str, int, int, float]], list[tuple[str, int, int, float]]]:
    """Best and worst concepts by precision inside one report cell.

    Only concepts with TP + FP > 0 rank; ties order by concept id.
    Rows are (concept, tp, fp, precision).
    """
    cell = report.cells[(group, time_range, top_k, novelty)]
    rows = [
        (concept, t[0], t[1], t[0] / (t[0] + t[1]))
        for concept, t in cell.per_concept.items()
        if t[0] + t[1] > 0
    ]
    best = sorted(rows, key=lambda r: (-r[3], r[0]))[:top_n]
    worst = sorted(rows, key=lambda r: (r[3], r[0]))[:top_n]
    return best, worst


def top1_concept_accuracy(model: Model, timelines: Sequence[Timeline]) -> tuple[float, int]:
    """Model's next-concept accuracy with argmax restricted to concept
    tokens; returns (accuracy, n_positions) for variance estimates."""
    concept_idx = model.vocab.concept_indices()
    correct = 0
    total = 0
    for tl in timelines:
        ids = model.vocab.encode_timeline(tl)
        logits = model.forward(ids)
        for j in range(1, len(tl.items)):
            if tl.items[j].token.kind is not TokenKind.CONCEPT:
                continue
            if ids[j] == model.vocab.UNK:
                continue
            row = logits[j - 1][concept_idx]
            if int(concept_idx[int(np.argmax(row))]) == int(ids[j]):
                correct += 1
            total += 1
    return (correct / total if total else 0.0), total
