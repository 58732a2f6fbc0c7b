"""Exception types raised across the package."""


class CoinDieError(Exception):
    """Base class for all package errors."""


class DegenerateInput(CoinDieError, ValueError):
    """Point configuration too degenerate for the requested solve."""


class DegenerateNeighborhoodWarning(UserWarning):
    """A normal-estimation neighborhood was rank deficient; +z was used."""


class EmptyResult(CoinDieError):
    """Filtering removed every point of a cloud."""


class SingularSystem(CoinDieError):
    """The point-to-plane normal equations are numerically singular."""


class NoCorrespondences(CoinDieError):
    """Every nearest-neighbor pair was rejected during an ICP iteration."""


class AllTrialsFailed(CoinDieError):
    """No global-registration trial produced a result."""


class SingleClass(CoinDieError, ValueError):
    """Training data contains a single label."""


class DimensionMismatch(CoinDieError, ValueError):
    """Histogram and model dimensions disagree."""


class UndefinedARI(CoinDieError, ValueError):
    """The adjusted Rand index denominator vanishes for distinct partitions."""


class ParseError(CoinDieError, ValueError):
    """A point-cloud or text file could not be parsed.

    The message carries the offending line number or byte offset.
    """


class EmptyCloud(CoinDieError, ValueError):
    """A loaded file contained no points."""


class ConfigError(CoinDieError, ValueError):
    """Invalid or unknown configuration key."""
