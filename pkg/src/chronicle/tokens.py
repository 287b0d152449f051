"""Timeline token sum type and its wire spelling.

Spellings: ``C:<id>``, ``SEX:<code>``, ``ETH:<value>``, ``AGE:<years>``,
``SEP``, ``DEATH``. Padding exists only inside training batches and is
spelled ``<PAD>``; ``<UNK>`` marks out-of-vocabulary tokens at inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import UnknownToken

MAX_AGE_YEARS = 130

PAD_SPELLING = "<PAD>"
UNK_SPELLING = "<UNK>"


class Sex(Enum):
    FEMALE = "Female"
    MALE = "Male"
    UNKNOWN = "Unknown"

    @property
    def code(self) -> str:
        return self.value[0]

    @classmethod
    def parse(cls, value: str) -> "Sex":
        try:
            return cls(value)
        except ValueError:
            raise UnknownToken(f"unknown sex value: {value!r}") from None

    @classmethod
    def from_code(cls, code: str) -> "Sex":
        for member in cls:
            if member.code == code:
                return member
        raise UnknownToken(f"unknown sex code: {code!r}")


class Ethnicity(Enum):
    ASIAN = "Asian"
    BLACK = "Black"
    MIXED = "Mixed"
    OTHER = "Other"
    UNKNOWN = "Unknown"
    WHITE = "White"

    @classmethod
    def parse(cls, value: str) -> "Ethnicity":
        try:
            return cls(value)
        except ValueError:
            raise UnknownToken(f"unknown ethnicity value: {value!r}") from None


class TokenKind(Enum):
    CONCEPT = "concept"
    SEX = "sex"
    ETHNICITY = "ethnicity"
    AGE = "age"
    SEP = "sep"
    DEATH = "death"
    PAD = "pad"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: object = None

    @staticmethod
    def concept(concept_id: str) -> "Token":
        if not concept_id:
            raise UnknownToken("empty concept id")
        return Token(TokenKind.CONCEPT, concept_id)

    @staticmethod
    def sex(value: Sex) -> "Token":
        return Token(TokenKind.SEX, value)

    @staticmethod
    def ethnicity(value: Ethnicity) -> "Token":
        return Token(TokenKind.ETHNICITY, value)

    @staticmethod
    def age(years: int) -> "Token":
        if not 0 <= years <= MAX_AGE_YEARS:
            raise UnknownToken(f"age out of range [0, {MAX_AGE_YEARS}]: {years}")
        return Token(TokenKind.AGE, int(years))

    @staticmethod
    def sep() -> "Token":
        return Token(TokenKind.SEP)

    @staticmethod
    def death() -> "Token":
        return Token(TokenKind.DEATH)

    @staticmethod
    def pad() -> "Token":
        return Token(TokenKind.PAD)

    @property
    def is_concept(self) -> bool:
        return self.kind is TokenKind.CONCEPT

    def spell(self) -> str:
        k = self.kind
        if k is TokenKind.CONCEPT:
            return f"C:{self.value}"
        if k is TokenKind.SEX:
            return f"SEX:{self.value.code}"
        if k is TokenKind.ETHNICITY:
            return f"ETH:{self.value.value}"
        if k is TokenKind.AGE:
            return f"AGE:{self.value}"
        if k is TokenKind.SEP:
            return "SEP"
        if k is TokenKind.DEATH:
            return "DEATH"
        return PAD_SPELLING


def parse_token(spelling: str) -> Token:
    """Inverse of :meth:`Token.spell`; raises UnknownToken on bad input."""
    if spelling == "SEP":
        return Token.sep()
    if spelling == "DEATH":
        return Token.death()
    if spelling == PAD_SPELLING:
        return Token.pad()
    head, sep, rest = spelling.partition(":")
    if not sep or not rest:
        raise UnknownToken(f"malformed token spelling: {spelling!r}")
    if head == "C":
        return Token.concept(rest)
    if head == "SEX":
        return Token.sex(Sex.from_code(rest))
    if head == "ETH":
        return Token.ethnicity(Ethnicity.parse(rest))
    if head == "AGE":
        try:
            years = int(rest)
        except ValueError:
            raise UnknownToken(f"malformed age token: {spelling!r}") from None
        return Token.age(years)
    raise UnknownToken(f"malformed token spelling: {spelling!r}")
