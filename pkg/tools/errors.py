"""
Errors
Exception hierarchy shared by tools, agents and sessions.
"""


class MfgfnError(Exception):
    """Base class for every error raised by this toolkit."""


# Environments
class IllegalActionError(MfgfnError):
    pass


class TooLargeError(MfgfnError):
    pass


# Oracles
class DomainError(MfgfnError):
    pass


class InvalidTokenError(MfgfnError):
    pass


class OracleError(MfgfnError):
    """Oracle failure annotated with the index of the failing query."""

    def __init__(self, index: int, message: str):
        super().__init__(f"query {index}: {message}")
        self.index = index


# Surrogate
class NumericalFailure(MfgfnError):
    pass


# Policy
class NonPositiveRewardError(MfgfnError):
    pass


class DivergenceDetectedError(MfgfnError):
    pass


# Loop
class DuplicateQueryError(MfgfnError):
    pass


class BudgetError(MfgfnError):
    pass


class StalledError(BudgetError):
    """No unannotated (x, m) pair is left to query."""


# Metrics
class EmptySetError(MfgfnError):
    pass


class TooFewError(MfgfnError):
    pass


# Sessions / CLI
class ConfigError(MfgfnError):
    pass


class MissingDataError(MfgfnError):
    pass
