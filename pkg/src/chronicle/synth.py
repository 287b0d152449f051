"""Synthetic patient populations with known dynamics.

Patients follow a first-order Markov walk over concepts conditioned on a
demographic stratum, with geometric inter-event gaps, optional chronic
re-emission per visit day, and per-concept mortality. Because the
transition kernel is known, a reference predictor and its accuracy are
computable in closed form against any corpus the world generates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .ontology import Concept, ConceptType, Ontology
from .timeline import AnnotationEvent, Demographics, Timeline
from .tokens import Ethnicity, Sex, TokenKind

_DOMINANT_TYPES = (
    ConceptType.DISORDER,
    ConceptType.FINDING,
    ConceptType.SUBSTANCE,
    ConceptType.PROCEDURE,
)
_MINOR_TYPES = (
    ConceptType.OBSERVABLE_ENTITY,
    ConceptType.BODY_STRUCTURE,
    ConceptType.SITUATION,
    ConceptType.ORGANISM,
    ConceptType.RECORD_ARTIFACT,
)
_TYPE_WEIGHTS = (0.34, 0.24, 0.20, 0.12)  # dominant types; rest split the remainder

_ETHNICITIES = (
    Ethnicity.ASIAN,
    Ethnicity.BLACK,
    Ethnicity.MIXED,
    Ethnicity.OTHER,
    Ethnicity.UNKNOWN,
    Ethnicity.WHITE,
)
_ETHNICITY_WEIGHTS = (0.06, 0.18, 0.02, 0.06, 0.12, 0.56)

_ANCHOR_DATE = date(2010, 1, 1)


@dataclass(frozen=True)
class SynthParams:
    n_concepts: int = 50
    n_patients: int = 100
    mean_events: float = 30.0
    seed: int = 0
    hierarchy_depth: int = 2
    chronic_fraction: float = 0.2
    gap_mean_days: float = 7.0
    transition_peak: float = 0.7
    stratify_by_sex: bool = True  # False: one shared kernel, dynamics purely Markov

    def __post_init__(self) -> None:
        if min(self.n_concepts, self.n_patients, self.hierarchy_depth) < 1:
            raise ValueError("counts and hierarchy depth must be positive")
        if self.mean_events <= 0 or self.gap_mean_days <= 0:
            raise ValueError("mean_events and gap_mean_days must be positive")
        if not 0.0 <= self.chronic_fraction <= 1.0:
            raise ValueError("chronic_fraction must lie in [0, 1]")
        if not 0.0 < self.transition_peak < 1.0:
            raise ValueError("transition_peak must lie in (0, 1)")


@dataclass
class SynthWorld:
    ontology: Ontology
    concept_order: list[str]
    strata: list[str]
    start: dict[str, np.ndarray]
    kernel: dict[str, np.ndarray]
    chronic: dict[str, float]
    mortality: dict[str, float]
    gap_mean_days: float = 7.0
    concept_index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.concept_index = {c: i for i, c in enumerate(self.concept_order)}


def _distribution_row(rng: np.random.Generator, n: int, peak: float) -> np.ndarray:
    support = min(6, n)
    targets = rng.choice(n, size=support, replace=False)
    row = np.zeros(n)
    if support == 1:
        row[targets[0]] = 1.0
        return row
    rest = rng.random(support - 1)
    rest = rest / rest.sum() * (1.0 - peak)
    row[targets[0]] = peak
    row[targets[1:]] = rest
    return row / row.sum()


def build_world(p: SynthParams) -> SynthWorld:
    """Deterministic world from the seed: typed concept ontology with a
    bounded-depth hierarchy, per-stratum transition kernels, a chronic
    set, and per-concept mortality hazards."""
    rng = np.random.default_rng(p.seed)
    n = p.n_concepts
    concept_ids = [f"C{i:04d}" for i in range(n)]

    minor_share = 1.0 - sum(_TYPE_WEIGHTS)
    types = list(_DOMINANT_TYPES) + list(_MINOR_TYPES)
    weights = list(_TYPE_WEIGHTS) + [minor_share / len(_MINOR_TYPES)] * len(_MINOR_TYPES)
    assigned = [
        types[i] if i < len(_DOMINANT_TYPES)  # guarantee each dominant type exists
        else types[rng.choice(len(types), p=weights)]
        for i in range(n)
    ]

    concepts = {
        cid: Concept(cid, f"{assigned[i].value.lower()} {i:04d}", assigned[i])
        for i, cid in enumerate(concept_ids)
    }

    parents: dict[str, tuple[str, ...]] = {}
    depth = {cid: 0 for cid in concept_ids}
    by_type: dict[ConceptType, list[str]] = {}
    for cid in concept_ids:
        by_type.setdefault(concepts[cid].type, []).append(cid)
    # one explicit chain of hierarchy_depth edges in the largest type group
    largest = max(by_type.values(), key=len)
    chain = largest[: p.hierarchy_depth + 1]
    for child, parent in zip(chain[1:], chain):
        parents[child] = (parent,)
        depth[child] = depth[parent] + 1
    # sprinkle extra same-type parent links without exceeding the depth cap
    for group in by_type.values():
        for i, cid in enumerate(group):
            if cid in parents or i == 0:
                continue
            if rng.random() < 0.25:
                candidate = group[int(rng.integers(0, i))]
                if depth[candidate] < p.hierarchy_depth:
                    parents[cid] = (candidate,)
                    depth[cid] = depth[candidate] + 1

    strata = [Sex.FEMALE.value, Sex.MALE.value]
    start = {}
    kernel = {}
    for stratum in strata:
        if not p.stratify_by_sex and start:
            first = strata[0]
            start[stratum] = start[first]
            kernel[stratum] = kernel[first]
            continue
        start[stratum] = _distribution_row(rng, n, min(0.4, p.transition_peak))
        kernel[stratum] = np.stack(
            [_distribution_row(rng, n, p.transition_peak) for _ in range(n)]
        )

    n_chronic = int(round(p.chronic_fraction * n))
    chronic_ids = sorted(rng.choice(n, size=n_chronic, replace=False).tolist())
    chronic = {concept_ids[i]: float(rng.uniform(0.25, 0.5)) for i in chronic_ids}

    n_mortal = max(1, n // 20)
    mortal_ids = sorted(rng.choice(n, size=n_mortal, replace=False).tolist())
    mortality = {concept_ids[i]: float(rng.uniform(0.01, 0.06)) for i in mortal_ids}

    return SynthWorld(
        ontology=Ontology(concepts=concepts, parents=parents),
        concept_order=concept_ids,
        strata=strata,
        start=start,
        kernel=kernel,
        chronic=chronic,
        mortality=mortality,
        gap_mean_days=p.gap_mean_days,
    )


def _shift_years_back(d: date, years: int) -> date:
    try:
        return d.replace(year=d.year - years)
    except ValueError:  # Feb 29 landing on a non-leap year
        return d.replace(year=d.year - years, day=28)


def sample_population(
    world: SynthWorld, n_patients: int, seed: int, mean_events: float = 30.0
) -> tuple[list[AnnotationEvent], dict[str, Demographics]]:
    """Sample demographics and event streams for ``n_patients`` patients.

    Each patient gets an independent generator derived from the seed, so
    populations are reproducible and per-patient work could run in
    parallel with a fixed merge order.
    """
    seeds = np.random.SeedSequence(seed).spawn(n_patients)
    n = len(world.concept_order)
    events: list[AnnotationEvent] = []
    demographics: dict[str, Demographics] = {}

    for pi in range(n_patients):
        rng = np.random.default_rng(seeds[pi])
        pid = f"P{pi:05d}"
        sex = Sex.FEMALE if rng.random() < 0.5 else Sex.MALE
        ethnicity = _ETHNICITIES[rng.choice(len(_ETHNICITIES), p=_ETHNICITY_WEIGHTS)]
        age0 = int(rng.integers(18, 86))
        first_date = _ANCHOR_DATE + timedelta(days=int(rng.integers(0, 3650)))
        birth_date = _shift_years_back(first_date, age0) - timedelta(
            days=int(rng.integers(0, 330))
        )

        stratum = sex.value
        n_core = max(6, int(rng.poisson(mean_events)))
        d = first_date
        last: int | None = None
        acquired: list[int] = []
        death_date: date | None = None
        patient_events: list[tuple[date, int]] = []
        for step in range(n_core):
            if step > 0:
                # geometric on {1, 2, ...}: same-day collisions arise only
                # from chronic re-emission, keeping walks exactly Markov
                gap = int(rng.geometric(1.0 / world.gap_mean_days))
                d = d + timedelta(days=gap)
                for ci in acquired:
                    if rng.random() < world.chronic[world.concept_order[ci]]:
                        patient_events.append((d, ci))
            row = world.start[stratum] if last is None else world.kernel[stratum][last]
            ci = int(rng.choice(n, p=row))
            patient_events.append((d, ci))
            last = ci
            cid = world.concept_order[ci]
            if cid in world.chronic and ci not in acquired:
                acquired.append(ci)
            hazard = world.mortality.get(cid, 0.0)
            if hazard and rng.random() < hazard:
                death_date = d + timedelta(days=int(rng.integers(1, 30)))
                break

        demographics[pid] = Demographics(
            sex=sex, ethnicity=ethnicity, birth_date=birth_date, death_date=death_date
        )
        events.extend(
            AnnotationEvent(pid, t, world.concept_order[ci])
            for t, ci in patient_events
        )
    return events, demographics


def bayes_optimal_accuracy(world: SynthWorld, timelines: list[Timeline]) -> float:
    """Top-1 accuracy of the predictor that plays argmax of the true
    kernel row at every concept-target position of the given timelines."""
    correct = 0
    total = 0
    for tl in timelines:
        stratum = None
        for it in tl.items:
            if it.token.kind is TokenKind.SEX:
                stratum = it.token.value.value
                break
        if stratum not in world.kernel:
            continue
        last: int | None = None
        for it in tl.items:
            if not it.token.is_concept:
                continue
            ci = world.concept_index[it.token.value]
            row = world.start[stratum] if last is None else world.kernel[stratum][last]
            if int(np.argmax(row)) == ci:
                correct += 1
            total += 1
            last = ci
    return correct / total if total else 0.0


# ---------------------------------------------------------------------------
# world.json


def save_world(world: SynthWorld, path: str | Path) -> None:
    obj = {
        "concepts": [
            {
                "id": c.id,
                "name": c.name,
                "type": c.type.value,
                "parents": list(world.ontology.parents.get(c.id, ())),
            }
            for c in (world.ontology.concepts[cid] for cid in world.concept_order)
        ],
        "concept_order": world.concept_order,
        "strata": world.strata,
        "start": {s: world.start[s].tolist() for s in world.strata},
        "kernel": {s: world.kernel[s].tolist() for s in world.strata},
        "chronic": world.chronic,
        "mortality": world.mortality,
        "gap_mean_days": world.gap_mean_days,
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_world(path: str | Path) -> SynthWorld:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    concepts = {
        c["id"]: Concept(c["id"], c["name"], ConceptType.parse(c["type"]))
        for c in obj["concepts"]
    }
    parents = {
        c["id"]: tuple(c["parents"]) for c in obj["concepts"] if c["parents"]
    }
    return SynthWorld(
        ontology=Ontology(concepts=concepts, parents=parents),
        concept_order=list(obj["concept_order"]),
        strata=list(obj["strata"]),
        start={s: np.array(v) for s, v in obj["start"].items()},
        kernel={s: np.array(v) for s, v in obj["kernel"].items()},
        chronic={k: float(v) for k, v in obj["chronic"].items()},
        mortality={k: float(v) for k, v in obj["mortality"].items()},
        gap_mean_days=float(obj["gap_mean_days"]),
    )
