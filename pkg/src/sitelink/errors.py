"""Exception types raised across the toolkit.

Every error derives from ``SitelinkError`` so callers (notably the CLI) can
map them onto exit codes without enumerating each one.
"""


class SitelinkError(Exception):
    """Base class for all data/config errors raised by sitelink."""


class LengthMismatch(SitelinkError, ValueError):
    pass


class NonPositiveNoise(SitelinkError, ValueError):
    pass


class GridTooWide(SitelinkError, ValueError):
    pass


class InsufficientSamples(SitelinkError, ValueError):
    pass


class CapacityMismatch(SitelinkError, ValueError):
    def __init__(self, expected, actual):
        super().__init__(f"expected {expected} coded bits, got {actual}")
        self.expected = expected
        self.actual = actual


class UnknownMcs(SitelinkError, KeyError):
    pass


class ConfigInvalid(SitelinkError, ValueError):
    pass


class CapacityTooSmall(SitelinkError, ValueError):
    pass


class UnknownProfile(SitelinkError, KeyError):
    pass


class DimensionMismatch(SitelinkError, ValueError):
    pass


class IndexOutOfRange(SitelinkError, IndexError):
    pass


class EmptyRecord(SitelinkError, ValueError):
    pass


class InvalidPci(SitelinkError, ValueError):
    pass


class NoSyncFound(SitelinkError, RuntimeError):
    pass


class NoPilots(SitelinkError, ValueError):
    pass


class FormatError(SitelinkError, ValueError):
    pass


class TruncatedRecord(SitelinkError, ValueError):
    def __init__(self, index, detail=""):
        msg = f"record {index} is truncated"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.index = index


class UnknownReceiver(SitelinkError, KeyError):
    pass


class ShapeMismatch(SitelinkError, ValueError):
    pass


class VersionMismatch(SitelinkError, ValueError):
    def __init__(self, found, supported):
        super().__init__(f"file version {found} is not supported (this build reads version {supported})")
        self.found = found
        self.supported = supported


class ArchitectureMismatch(SitelinkError, ValueError):
    pass


class EmptyDataset(SitelinkError, ValueError):
    pass


class NotCrossed(SitelinkError, ValueError):
    """The BLER curve never crosses the target; ``side`` names the missing side."""

    def __init__(self, side, target):
        super().__init__(f"no BLER point {side} target {target:g}")
        self.side = side
        self.target = target


class EmptySplit(SitelinkError, ValueError):
    pass
