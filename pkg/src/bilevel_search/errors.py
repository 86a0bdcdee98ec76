"""Exception hierarchy shared across the search levels."""

from __future__ import annotations


class SearchError(Exception):
    """Base class for every error raised by this package."""


class ConfigSpaceError(SearchError):
    """A proposal cannot be applied to a configuration."""


class UnknownParameter(ConfigSpaceError):
    pass


class LockedParameter(ConfigSpaceError):
    pass


class FrozenParameter(ConfigSpaceError):
    pass


class OutOfDomain(ConfigSpaceError):
    pass


class SpaceFileError(SearchError):
    """Malformed parameter-space or landscape file."""


class BudgetExhausted(SearchError):
    pass


class NoProposalAvailable(SearchError):
    pass


class EmptyArms(SearchError):
    pass


class UnknownArm(SearchError):
    pass


class EmptyEligible(SearchError):
    pass


class EndpointUnavailable(SearchError):
    """The external endpoint did not answer within the retry budget."""


class SessionAborted(SearchError):
    pass
