"""Exception types shared across the package."""


class ChronicleError(Exception):
    """Base class for all domain errors."""


class DuplicateConcept(ChronicleError):
    pass


class UnknownType(ChronicleError):
    pass


class CyclicHierarchy(ChronicleError):
    pass


class DanglingParent(ChronicleError):
    pass


class UnknownConcept(ChronicleError):
    pass


class MissingDemographics(ChronicleError):
    pass


class InvalidRecord(ChronicleError):
    pass


class UnknownToken(ChronicleError):
    pass


class EmptyCorpus(ChronicleError):
    pass


class SequenceTooLong(ChronicleError):
    pass


class IndexOutOfVocab(ChronicleError):
    pass


class IoFailure(ChronicleError):
    pass


class FormatVersionMismatch(ChronicleError):
    pass


class ChecksumMismatch(ChronicleError):
    pass
