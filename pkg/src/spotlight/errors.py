"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, BackendError -> 3,
InputError -> 4.
"""

from __future__ import annotations


class SpotlightError(Exception):
    """Base class for all package errors."""


class InputError(SpotlightError):
    """Invalid domain input: bad indices, mismatched dims, missing files."""


class ConfigError(SpotlightError):
    """Missing or inconsistent configuration (backends, index, settings)."""


class BackendError(SpotlightError):
    """A remote backend failed after the configured retries."""

    def __init__(self, message: str, attempts: int = 1, retryable: bool = True):
        super().__init__(message)
        self.attempts = attempts
        self.retryable = retryable


class ContractError(BackendError):
    """A backend violated its wire contract (wrong dim, bad payload). Not retried."""

    def __init__(self, message: str):
        super().__init__(message, attempts=1, retryable=False)


class DatasetError(InputError):
    """Dataset failed validation; carries every problem found, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        summary = "; ".join(self.problems[:5])
        if len(self.problems) > 5:
            summary += f"; ... ({len(self.problems)} problems total)"
        super().__init__(f"dataset validation failed: {summary}")
