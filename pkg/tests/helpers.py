"""Shared builders for synthetic desk-scale corpora and models."""

from __future__ import annotations

from chronicle.model import Model, ModelConfig, build_vocab
from chronicle.ontology import Ontology
from chronicle.synth import SynthParams, build_world, sample_population
from chronicle.timeline import (
    BuildConfig,
    aggregate_events,
    build_corpus,
    split_patient_ids,
)

DESK_BUILD = BuildConfig(min_global_count=1, min_patient_count=1)

TINY_MODEL = ModelConfig(
    n_layers=1, n_heads=2, embedding_dim=16, context_len=128, feedforward_dim=32
)


def make_corpus(
    seed: int,
    n_patients: int = 15,
    n_concepts: int = 16,
    mean_events: float = 15.0,
    chronic_fraction: float = 0.25,
    flatten_hierarchy: bool = False,
    stratify_by_sex: bool = True,
):
    """World plus built corpus: (world, timelines, histories, demographics)."""
    params = SynthParams(
        n_concepts=n_concepts,
        n_patients=n_patients,
        mean_events=mean_events,
        seed=seed,
        hierarchy_depth=1 if flatten_hierarchy else 2,
        chronic_fraction=chronic_fraction,
        stratify_by_sex=stratify_by_sex,
    )
    world = build_world(params)
    if flatten_hierarchy:
        world.ontology = Ontology(concepts=world.ontology.concepts, parents={})
    events, demographics = sample_population(
        world, n_patients, seed + 1, mean_events=mean_events
    )
    records = aggregate_events(events, demographics)
    timelines, histories = build_corpus(records, world.ontology, DESK_BUILD)
    return world, timelines, histories, demographics


def untrained_model(timelines, ontology, seed: int = 0) -> Model:
    vocab = build_vocab(timelines, ontology)
    return Model.init(TINY_MODEL, vocab, seed=seed)


def split_timelines(timelines, demographics, fraction: float, seed: int):
    train_ids, test_ids = split_patient_ids(sorted(demographics), fraction, seed)
    return (
        [t for t in timelines if t.patient_id in train_ids],
        [t for t in timelines if t.patient_id in test_ids],
    )
