"""Exception hierarchy shared by all idsutil modules."""


class IdsUtilError(Exception):
    pass


# -- pcap / trace model ------------------------------------------------------

class PcapError(IdsUtilError):
    pass


class BadMagic(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class FieldAbsent(IdsUtilError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class WidthMismatch(IdsUtilError, ValueError):
    pass


# -- anonymizers -------------------------------------------------------------

class AnonymizationError(IdsUtilError):
    pass


class WrongWidth(AnonymizationError, ValueError):
    pass


class TooManyUnits(AnonymizationError, ValueError):
    pass


class ParamError(AnonymizationError, ValueError):
    pass


class BadBoundaries(ParamError):
    pass


class ValueOutOfRange(AnonymizationError, ValueError):
    pass


# -- policy ------------------------------------------------------------------

class PolicyError(IdsUtilError):
    """Policy file problem; ``line`` is 1-based, or None when not tied to a line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PolicySyntaxError(PolicyError):
    pass


class UnknownField(PolicyError):
    pass


class UnknownAlgorithm(PolicyError):
    pass


class DuplicateField(PolicyError):
    pass


class PolicyInvalid(PolicyError):
    pass


# -- detector ----------------------------------------------------------------

class AlertFormatError(IdsUtilError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class BadColumnCount(AlertFormatError):
    pass


class BadFieldFormat(AlertFormatError):
    pass


class RuleSyntaxError(IdsUtilError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# -- metrics -----------------------------------------------------------------

class MissingConstituent(IdsUtilError, KeyError):
    def __str__(self):
        return Exception.__str__(self)
