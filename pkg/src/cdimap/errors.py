"""Exception hierarchy shared across the toolkit."""


class CdiMapError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(CdiMapError):
    """Invalid scenario, grid, split, or campaign configuration."""


class FormatError(CdiMapError):
    """Malformed or inconsistent file / record contents."""


class AnalysisError(CdiMapError):
    """An analysis step cannot produce a meaningful result (e.g. no CIR taps above threshold)."""


class InsufficientSamplesError(AnalysisError):
    """Too few samples for the requested quantile order (floor(N*epsilon) < 1)."""


class InsufficientDataError(CdiMapError):
    """Too few training locations to fit a map."""


class NumericalError(CdiMapError):
    """Linear-algebra failure; carries diagnostics in the message."""


class DomainError(CdiMapError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class CampaignError(CdiMapError):
    """Monte Carlo campaign aborted (e.g. too many repetition failures)."""
