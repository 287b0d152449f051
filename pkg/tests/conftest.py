import os

# keep BLAS single-threaded before numpy loads: deterministic and faster
# for the small models exercised here
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

from datetime import date

import pytest

from chronicle.ontology import load_ontology
from chronicle.timeline import Demographics
from chronicle.tokens import Ethnicity, Sex


@pytest.fixture
def flat_disorder_ontology():
    rows = ["id\tname\ttype\tparents"]
    rows += [f"D{i:02d}\tdisorder {i}\tDisorder\t" for i in range(20)]
    rows += ["S00\tsubstance 0\tSubstance\t", "F00\tfinding 0\tFinding\t"]
    return load_ontology(rows)


@pytest.fixture
def chain_ontology():
    # A <- B <- C: C's parent is B, B's parent is A
    return load_ontology(
        [
            "id\tname\ttype\tparents",
            "A\talpha\tDisorder\t",
            "B\tbeta\tDisorder\tA",
            "C\tgamma\tDisorder\tB",
            "X\txi\tFinding\t",
            "Y\typsilon\tFinding\t",
        ]
    )


@pytest.fixture
def base_demographics():
    return Demographics(
        sex=Sex.FEMALE,
        ethnicity=Ethnicity.BLACK,
        birth_date=date(1980, 6, 15),
    )
