"""Turn raw annotation events into enriched, tokenized timelines.

Processing order is fixed: global frequency filter, per-patient frequency
filter, ancestor pruning, bucketing with in-bucket dedup, age-change
tokens, separators, demographic prefix, death marker, and finally the
length split with the short-fragment drop.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidRecord, MissingDemographics
from .ontology import Ontology
from .tokens import Ethnicity, Sex, Token, parse_token

AGE_BANDS: tuple[tuple[str, int, float], ...] = (
    ("0-18", 0, 18),
    ("18-30", 18, 30),
    ("30-41", 30, 41),
    ("41-50", 41, 51),
    ("51-64", 51, 64),
    ("64+", 64, float("inf")),
)

DAYS_PER_YEAR = 365.25


@dataclass(frozen=True)
class AnnotationEvent:
    patient_id: str
    timestamp: date
    concept: str


@dataclass(frozen=True)
class Demographics:
    sex: Sex
    ethnicity: Ethnicity
    birth_date: date
    death_date: date | None = None

    def __post_init__(self) -> None:
        if self.death_date is not None and self.death_date < self.birth_date:
            raise InvalidRecord("death_date precedes birth_date")


@dataclass
class PatientRecord:
    patient_id: str
    demographics: Demographics
    events: list[AnnotationEvent]


@dataclass(frozen=True)
class BuildConfig:
    bucket_days: int = 1
    max_concepts: int = 256
    min_concepts: int = 10
    min_global_count: int = 100
    min_patient_count: int = 2

    def __post_init__(self) -> None:
        if self.bucket_days < 1:
            raise ValueError("bucket_days must be positive")
        if self.min_concepts < 1 or self.max_concepts < 1:
            raise ValueError("concept bounds must be positive")
        if self.min_concepts > self.max_concepts:
            raise ValueError("min_concepts must not exceed max_concepts")
        if self.min_global_count < 1 or self.min_patient_count < 1:
            raise ValueError("frequency thresholds must be positive")


@dataclass(frozen=True)
class TimelineItem:
    token: Token
    t: date


@dataclass
class Timeline:
    patient_id: str
    fragment_index: int
    items: list[TimelineItem]

    @property
    def concept_count(self) -> int:
        return sum(1 for it in self.items if it.token.is_concept)

    def spellings(self) -> list[str]:
        return [it.token.spell() for it in self.items]


def age_years(birth: date, at: date) -> int:
    """Completed years between birth and ``at``."""
    years = at.year - birth.year
    if (at.month, at.day) < (birth.month, birth.day):
        years -= 1
    return max(0, years)


def validate_record(record: PatientRecord) -> None:
    """Check event ordering and lifespan bounds; raises InvalidRecord."""
    demo = record.demographics
    prev: date | None = None
    for ev in record.events:
        if ev.patient_id != record.patient_id:
            raise InvalidRecord(
                f"event patient {ev.patient_id!r} inside record {record.patient_id!r}"
            )
        if prev is not None and ev.timestamp < prev:
            raise InvalidRecord(f"events out of order for {record.patient_id!r}")
        prev = ev.timestamp
        if ev.timestamp < demo.birth_date:
            raise InvalidRecord(f"event before birth for {record.patient_id!r}")
        if demo.death_date is not None and ev.timestamp > demo.death_date:
            raise InvalidRecord(f"event after death for {record.patient_id!r}")


def aggregate_events(
    events: Iterable[AnnotationEvent],
    demographics: dict[str, Demographics],
) -> list[PatientRecord]:
    """Group an event stream into per-patient records.

    Events are sorted by timestamp with ties broken by concept id, so the
    result is deterministic regardless of input order. Patients are
    returned in sorted id order.
    """
    by_patient: dict[str, list[AnnotationEvent]] = defaultdict(list)
    for ev in events:
        if ev.patient_id not in demographics:
            raise MissingDemographics(f"no demographics for patient {ev.patient_id!r}")
        by_patient[ev.patient_id].append(ev)

    records = []
    for pid in sorted(by_patient):
        evs = sorted(by_patient[pid], key=lambda e: (e.timestamp, e.concept))
        record = PatientRecord(pid, demographics[pid], evs)
        validate_record(record)
        records.append(record)
    return records


def apply_frequency_filters(
    records: list[PatientRecord], cfg: BuildConfig
) -> list[PatientRecord]:
    """Drop globally rare concepts, then per-patient near-unique ones.

    The global pass removes every event whose concept occurs fewer than
    ``min_global_count`` times across all records; the patient pass then
    removes events whose concept occurs fewer than ``min_patient_count``
    times among that patient's remaining events.
    """
    global_counts: Counter[str] = Counter()
    for rec in records:
        global_counts.update(ev.concept for ev in rec.events)

    filtered = []
    for rec in records:
        kept = [ev for ev in rec.events if global_counts[ev.concept] >= cfg.min_global_count]
        patient_counts = Counter(ev.concept for ev in kept)
        kept = [ev for ev in kept if patient_counts[ev.concept] >= cfg.min_patient_count]
        filtered.append(replace(rec, events=kept))
    return filtered


def filtered_concept_events(
    record: PatientRecord, ontology: Ontology, cfg: BuildConfig
) -> list[tuple[int, str, date]]:
    """Ancestor-pruned, bucket-deduplicated events as (bucket, concept, date).

    An event is pruned when any strictly earlier kept event's concept is a
    strict descendant of it; ancestors arriving before their descendants
    are kept. Buckets are ``bucket_days`` windows anchored at the first
    kept event; within a bucket the earliest mention of a concept wins.
    """
    kept: list[AnnotationEvent] = []
    ancestors_of_kept: set[str] = set()  # ancestors of strictly earlier kept events
    pending: list[AnnotationEvent] = []  # kept events at the current timestamp
    current_t: date | None = None
    for ev in record.events:
        if ev.timestamp != current_t:
            for p in pending:
                ancestors_of_kept.update(ontology.ancestors(p.concept))
            pending = []
            current_t = ev.timestamp
        if ev.concept in ancestors_of_kept:
            continue
        kept.append(ev)
        pending.append(ev)

    if not kept:
        return []
    anchor = kept[0].timestamp
    out: list[tuple[int, str, date]] = []
    seen: dict[int, set[str]] = defaultdict(set)
    for ev in kept:
        bucket = (ev.timestamp - anchor).days // cfg.bucket_days
        if ev.concept in seen[bucket]:
            continue
        seen[bucket].add(ev.concept)
        out.append((bucket, ev.concept, ev.timestamp))
    return out


def build_timeline(
    record: PatientRecord, ontology: Ontology, cfg: BuildConfig
) -> list[Timeline]:
    """Build enriched timeline fragments for one frequency-filtered record.

    Every fragment carries its own demographic prefix (sex, ethnicity,
    age at the fragment's first event); buckets are joined by separators;
    an age token is emitted at a bucket boundary whenever the completed
    age changed; the death marker rides on the final fragment. Fragments
    holding fewer than ``min_concepts`` concept tokens are dropped.
    """
    events = filtered_concept_events(record, ontology, cfg)
    if not events:
        return []

    demo = record.demographics
    chunks = [
        events[i : i + cfg.max_concepts]
        for i in range(0, len(events), cfg.max_concepts)
    ]
    fragments: list[Timeline] = []
    for chunk_idx, chunk in enumerate(chunks):
        if len(chunk) < cfg.min_concepts:
            continue
        first_date = chunk[0][2]
        prefix_age = age_years(demo.birth_date, first_date)
        items = [
            TimelineItem(Token.sex(demo.sex), first_date),
            TimelineItem(Token.ethnicity(demo.ethnicity), first_date),
            TimelineItem(Token.age(prefix_age), first_date),
        ]
        last_age = prefix_age
        prev_bucket: int | None = None
        prev_date = first_date
        for bucket, concept, t in chunk:
            if prev_bucket is not None and bucket != prev_bucket:
                items.append(TimelineItem(Token.sep(), prev_date))
                bucket_age = age_years(demo.birth_date, t)
                if bucket_age != last_age:
                    items.append(TimelineItem(Token.age(bucket_age), t))
                    last_age = bucket_age
            items.append(TimelineItem(Token.concept(concept), t))
            prev_bucket = bucket
            prev_date = t
        if chunk_idx == len(chunks) - 1 and demo.death_date is not None:
            items.append(TimelineItem(Token.death(), demo.death_date))
        fragments.append(Timeline(record.patient_id, len(fragments), items))
    return fragments


def build_corpus(
    records: list[PatientRecord], ontology: Ontology, cfg: BuildConfig
) -> tuple[list[Timeline], dict[str, list[tuple[str, date]]]]:
    """Filter and build all records; also return per-patient filtered
    event histories (pre-split), which evaluation windows run against."""
    filtered = apply_frequency_filters(records, cfg)
    timelines: list[Timeline] = []
    histories: dict[str, list[tuple[str, date]]] = {}
    for rec in filtered:
        events = filtered_concept_events(rec, ontology, cfg)
        histories[rec.patient_id] = [(c, t) for _, c, t in events]
        timelines.extend(build_timeline(rec, ontology, cfg))
    return timelines, histories


def split_patient_ids(
    patient_ids: Sequence[str], test_fraction: float, seed: int
) -> tuple[set[str], set[str]]:
    """Deterministic patient-level partition into (train, test) id sets."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    ordered = sorted(set(patient_ids))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    n_test = int(round(len(ordered) * test_fraction))
    test = {ordered[i] for i in perm[:n_test]}
    train = {pid for pid in ordered if pid not in test}
    return train, test


def split_corpus(
    records: list[PatientRecord], test_fraction: float, seed: int
) -> tuple[list[PatientRecord], list[PatientRecord]]:
    """Patient-level train/test split, deterministic in the seed."""
    train_ids, test_ids = split_patient_ids(
        [r.patient_id for r in records], test_fraction, seed
    )
    train = [r for r in records if r.patient_id in train_ids]
    test = [r for r in records if r.patient_id in test_ids]
    return train, test


# ---------------------------------------------------------------------------
# Corpus statistics


@dataclass
class StrataSummary:
    count: int = 0
    mean_length: float = 0.0
    mean_span_years: float = 0.0


@dataclass
class CorpusStats:
    n_timelines: int
    n_patients: int
    mean_length: float
    mean_span_years: float
    patients_by_sex: dict[str, int]
    patients_by_ethnicity: dict[str, int]
    patients_by_age_band: dict[str, int]
    by_sex: dict[str, StrataSummary]
    by_ethnicity: dict[str, StrataSummary]
    by_age_band: dict[str, StrataSummary]
    mean_concepts_by_type: dict[str, float] = field(default_factory=dict)


def _age_band(age: int) -> str:
    for label, lo, hi in AGE_BANDS:
        if lo <= age < hi:
            return label
    return AGE_BANDS[-1][0]


def _bands_spanned(age_first: int, age_last: int) -> list[str]:
    return [label for label, lo, hi in AGE_BANDS if age_first < hi and age_last >= lo]


def corpus_stats(
    timelines: list[Timeline],
    demographics: dict[str, Demographics],
    ontology: Ontology | None = None,
) -> CorpusStats:
    """Per-stratum timeline statistics.

    Patient age-band membership multi-counts every band the patient's
    data spans; per-band timeline means use the patient's most recent
    age. Span is measured first item to last item in years.
    """
    lengths = [tl.concept_count for tl in timelines]
    spans = [
        (tl.items[-1].t - tl.items[0].t).days / DAYS_PER_YEAR if tl.items else 0.0
        for tl in timelines
    ]

    first_age: dict[str, int] = {}
    last_age: dict[str, int] = {}
    for tl in timelines:
        if not tl.items:
            continue
        birth = demographics[tl.patient_id].birth_date
        a0 = age_years(birth, tl.items[0].t)
        a1 = age_years(birth, tl.items[-1].t)
        pid = tl.patient_id
        first_age[pid] = min(a0, first_age.get(pid, a0))
        last_age[pid] = max(a1, last_age.get(pid, a1))

    patients = sorted(first_age)
    patients_by_sex: Counter[str] = Counter()
    patients_by_eth: Counter[str] = Counter()
    patients_by_band: Counter[str] = Counter()
    for pid in patients:
        demo = demographics[pid]
        patients_by_sex[demo.sex.value] += 1
        patients_by_eth[demo.ethnicity.value] += 1
        for band in _bands_spanned(first_age[pid], last_age[pid]):
            patients_by_band[band] += 1

    def summarize(indices: list[int]) -> StrataSummary:
        if not indices:
            return StrataSummary()
        return StrataSummary(
            count=len(indices),
            mean_length=float(np.mean([lengths[i] for i in indices])),
            mean_span_years=float(np.mean([spans[i] for i in indices])),
        )

    by_sex_idx: dict[str, list[int]] = defaultdict(list)
    by_eth_idx: dict[str, list[int]] = defaultdict(list)
    by_band_idx: dict[str, list[int]] = defaultdict(list)
    for i, tl in enumerate(timelines):
        demo = demographics[tl.patient_id]
        by_sex_idx[demo.sex.value].append(i)
        by_eth_idx[demo.ethnicity.value].append(i)
        by_band_idx[_age_band(last_age[tl.patient_id])].append(i)

    mean_by_type: dict[str, float] = {}
    if ontology is not None and timelines:
        type_totals: Counter[str] = Counter()
        for tl in timelines:
            for it in tl.items:
                if it.token.is_concept:
                    type_totals[ontology.type_of(it.token.value).value] += 1
        mean_by_type = {
            t: type_totals[t] / len(timelines) for t in sorted(type_totals)
        }

    return CorpusStats(
        n_timelines=len(timelines),
        n_patients=len(patients),
        mean_length=float(np.mean(lengths)) if lengths else 0.0,
        mean_span_years=float(np.mean(spans)) if spans else 0.0,
        patients_by_sex=dict(sorted(patients_by_sex.items())),
        patients_by_ethnicity=dict(sorted(patients_by_eth.items())),
        patients_by_age_band={
            label: patients_by_band.get(label, 0) for label, _, _ in AGE_BANDS
        },
        by_sex={k: summarize(v) for k, v in sorted(by_sex_idx.items())},
        by_ethnicity={k: summarize(v) for k, v in sorted(by_eth_idx.items())},
        by_age_band={
            label: summarize(by_band_idx.get(label, []))
            for label, _, _ in AGE_BANDS
        },
        mean_concepts_by_type=mean_by_type,
    )


# ---------------------------------------------------------------------------
# File formats (JSON Lines)


def load_events(path: str | Path) -> list[AnnotationEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            events.append(
                AnnotationEvent(
                    patient_id=obj["patient_id"],
                    timestamp=date.fromisoformat(obj["timestamp"]),
                    concept=obj["concept"],
                )
            )
    return events


def write_events(events: Iterable[AnnotationEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(
                json.dumps(
                    {
                        "patient_id": ev.patient_id,
                        "timestamp": ev.timestamp.isoformat(),
                        "concept": ev.concept,
                    }
                )
                + "\n"
            )


def load_demographics(path: str | Path) -> dict[str, Demographics]:
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            table[obj["patient_id"]] = Demographics(
                sex=Sex.parse(obj["sex"]),
                ethnicity=Ethnicity.parse(obj["ethnicity"]),
                birth_date=date.fromisoformat(obj["birth_date"]),
                death_date=(
                    date.fromisoformat(obj["death_date"])
                    if obj.get("death_date")
                    else None
                ),
            )
    return table


def write_demographics(table: dict[str, Demographics], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pid in sorted(table):
            demo = table[pid]
            fh.write(
                json.dumps(
                    {
                        "patient_id": pid,
                        "sex": demo.sex.value,
                        "ethnicity": demo.ethnicity.value,
                        "birth_date": demo.birth_date.isoformat(),
                        "death_date": (
                            demo.death_date.isoformat() if demo.death_date else None
                        ),
                    }
                )
                + "\n"
            )


def write_timelines(timelines: Iterable[Timeline], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tl in timelines:
            fh.write(
                json.dumps(
                    {
                        "patient_id": tl.patient_id,
                        "fragment": tl.fragment_index,
                        "items": [
                            {"token": it.token.spell(), "t": it.t.isoformat()}
                            for it in tl.items
                        ],
                    }
                )
                + "\n"
            )


def load_timelines(path: str | Path) -> list[Timeline]:
    timelines = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            items = [
                TimelineItem(parse_token(it["token"]), date.fromisoformat(it["t"]))
                for it in obj["items"]
            ]
            timelines.append(Timeline(obj["patient_id"], obj["fragment"], items))
    return timelines


def write_histories(
    histories: dict[str, list[tuple[str, date]]], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pid in sorted(histories):
            fh.write(
                json.dumps(
                    {
                        "patient_id": pid,
                        "events": [
                            {"concept": c, "t": t.isoformat()}
                            for c, t in histories[pid]
                        ],
                    }
                )
                + "\n"
            )


def load_histories(path: str | Path) -> dict[str, list[tuple[str, date]]]:
    histories: dict[str, list[tuple[str, date]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            histories[obj["patient_id"]] = [
                (e["concept"], date.fromisoformat(e["t"])) for e in obj["events"]
            ]
    return histories
