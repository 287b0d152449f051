"""Concept vocabulary: identifiers, semantic types, and the parent hierarchy.

The hierarchy is a DAG over concept ids (a concept may have several
parents). Ancestry is transitive and irreflexive, which keeps repeat
occurrences of one concept out of the pruning logic downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from .errors import (
    CyclicHierarchy,
    DanglingParent,
    DuplicateConcept,
    UnknownConcept,
    UnknownType,
)

ONTOLOGY_HEADER = "id\tname\ttype\tparents"


class ConceptType(Enum):
    """Closed enumeration of semantic types a concept can carry."""

    OCCUPATION = "Occupation"
    DISORDER = "Disorder"
    CLINICAL_DRUG = "Clinical drug"
    TUMOUR_STAGING = "Tumour staging"
    RECORD_ARTIFACT = "Record artifact"
    MEDICINAL_PRODUCT_FORM = "Medicinal product form"
    ORGANISM = "Organism"
    SITUATION = "Situation"
    OBSERVABLE_ENTITY = "Observable entity"
    SUBSTANCE = "Substance"
    FINDING = "Finding"
    ASSESSMENT_SCALE = "Assessment scale"
    MEDICINAL_PRODUCT = "Medicinal product"
    BODY_STRUCTURE = "Body structure"
    PHYSICAL_OBJECT = "Physical object"
    MORPHOLOGIC_ABNORMALITY = "Morphologic abnormality"
    REGIME_THERAPY = "Regime/Therapy"
    PRODUCT = "Product"
    PROCEDURE = "Procedure"

    @classmethod
    def parse(cls, name: str) -> "ConceptType":
        try:
            return cls(name)
        except ValueError:
            raise UnknownType(f"unknown concept type: {name!r}") from None

    @classmethod
    def parse_or_none(cls, name: str) -> "ConceptType | None":
        try:
            return cls(name)
        except ValueError:
            return None


@dataclass(frozen=True)
class Concept:
    id: str
    name: str
    type: ConceptType


@dataclass
class Ontology:
    """Immutable after construction; safe for concurrent reads."""

    concepts: dict[str, Concept] = field(default_factory=dict)
    parents: dict[str, tuple[str, ...]] = field(default_factory=dict)
    _ancestor_cache: dict[str, frozenset[str]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.concepts

    def __len__(self) -> int:
        return len(self.concepts)

    def _require(self, concept_id: str) -> Concept:
        try:
            return self.concepts[concept_id]
        except KeyError:
            raise UnknownConcept(f"unknown concept: {concept_id!r}") from None

    def type_of(self, concept_id: str) -> ConceptType:
        return self._require(concept_id).type

    def name_of(self, concept_id: str) -> str:
        return self._require(concept_id).name

    def ancestors(self, concept_id: str) -> frozenset[str]:
        """All concepts reachable by one or more child-to-parent steps."""
        self._require(concept_id)
        cached = self._ancestor_cache.get(concept_id)
        if cached is not None:
            return cached
        seen: set[str] = set()
        stack = list(self.parents.get(concept_id, ()))
        while stack:
            p = stack.pop()
            if p in seen:
                continue
            seen.add(p)
            stack.extend(self.parents.get(p, ()))
        result = frozenset(seen)
        self._ancestor_cache[concept_id] = result
        return result

    def is_ancestor(self, a: str, b: str) -> bool:
        """True iff ``a`` is a strict ancestor of ``b``.

        Irreflexive by construction: a concept is never its own ancestor,
        so repeats of one concept never count as ancestry.
        """
        self._require(a)
        return a in self.ancestors(b)


def load_ontology(source: TextIO | Iterable[str]) -> Ontology:
    """Parse a tab-separated concept table into a validated Ontology.

    Row format: ``id<TAB>name<TAB>type<TAB>parent1|parent2|...`` with a
    mandatory header row. An entirely empty stream yields an empty
    ontology. Rejects duplicate ids, unknown types, dangling parent
    references, and cycles (including self-loops).
    """
    lines: Iterator[str] = iter(source)
    try:
        header = next(lines)
    except StopIteration:
        return Ontology()
    if header.rstrip("\r\n") != ONTOLOGY_HEADER:
        raise ValueError(
            f"bad ontology header: expected {ONTOLOGY_HEADER!r}, got {header.rstrip()!r}"
        )

    concepts: dict[str, Concept] = {}
    parents: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(lines, start=2):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 tab-separated fields")
        cid, name, type_name, parent_field = parts
        if not cid:
            raise ValueError(f"line {lineno}: empty concept id")
        if cid in concepts:
            raise DuplicateConcept(f"line {lineno}: duplicate concept id {cid!r}")
        concepts[cid] = Concept(id=cid, name=name, type=ConceptType.parse(type_name))
        parent_ids = tuple(p for p in parent_field.split("|") if p)
        if parent_ids:
            parents[cid] = parent_ids

    for cid, ps in parents.items():
        for p in ps:
            if p not in concepts:
                raise DanglingParent(f"concept {cid!r} references missing parent {p!r}")

    _check_acyclic(concepts, parents)
    return Ontology(concepts=concepts, parents=parents)


def load_ontology_file(path: str | Path) -> Ontology:
    with open(path, "r", encoding="utf-8") as fh:
        return load_ontology(fh)


def write_ontology(ontology: Ontology, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ONTOLOGY_HEADER + "\n")
        for cid in sorted(ontology.concepts):
            c = ontology.concepts[cid]
            ps = "|".join(ontology.parents.get(cid, ()))
            fh.write(f"{c.id}\t{c.name}\t{c.type.value}\t{ps}\n")


def _check_acyclic(
    concepts: dict[str, Concept], parents: dict[str, tuple[str, ...]]
) -> None:
    # Iterative three-colour DFS over child->parent edges.
    WHITE, GREY, BLACK = 0, 1, 2
    colour = {cid: WHITE for cid in concepts}
    for start in concepts:
        if colour[start] != WHITE:
            continue
        stack: list[tuple[str, Iterator[str]]] = [(start, iter(parents.get(start, ())))]
        colour[start] = GREY
        while stack:
            node, edges = stack[-1]
            advanced = False
            for nxt in edges:
                if colour[nxt] == GREY:
                    raise CyclicHierarchy(f"cycle through concept {nxt!r}")
                if colour[nxt] == WHITE:
                    colour[nxt] = GREY
                    stack.append((nxt, iter(parents.get(nxt, ()))))
                    advanced = True
                    break
            if not advanced:
                colour[node] = BLACK
                stack.pop()
