"""Exception types shared across the package."""


class SrrError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SrrError):
    """Malformed data: non-finite entries, wrong shapes, unparsable files."""


class DomainError(SrrError):
    """Parameter outside its valid domain: ranks, bit widths, epsilons."""
