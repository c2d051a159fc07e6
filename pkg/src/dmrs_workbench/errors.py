"""Exception hierarchy shared across the workbench."""

from __future__ import annotations


class WorkbenchError(Exception):
    """Base class for every error raised deliberately by this package."""


class OutOfRange(WorkbenchError, ValueError):
    pass


class ParseError(WorkbenchError):
    """Input could not be parsed. ``record`` is the 0-based record index when known."""

    def __init__(self, message: str, record: int | None = None) -> None:
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class ValidationError(WorkbenchError):
    pass


class InsufficientStratum(WorkbenchError):
    def __init__(self, stratum: object, quota: int, available: int) -> None:
        super().__init__(f"stratum {stratum!r} needs {quota} dialogues but only {available} exist")
        self.stratum = stratum
        self.quota = quota
        self.available = available


class KeyMismatch(WorkbenchError):
    def __init__(self, only_left: list, only_right: list) -> None:
        super().__init__(
            f"key sets differ: {len(only_left)} only in first, {len(only_right)} only in second "
            f"(first few: {sorted(only_left)[:5]} / {sorted(only_right)[:5]})"
        )
        self.only_left = only_left
        self.only_right = only_right


class DegenerateMarginals(WorkbenchError):
    """Expected agreement is 1, so kappa is undefined."""


class MissingAdjudication(WorkbenchError):
    def __init__(self, keys: list) -> None:
        super().__init__(f"no adjudication for {len(keys)} disagreement(s): {keys[:10]}")
        self.keys = keys


class SpuriousAdjudication(WorkbenchError):
    def __init__(self, keys: list) -> None:
        super().__init__(f"adjudication given for {len(keys)} key(s) without disagreement: {keys[:10]}")
        self.keys = keys


class JoinError(WorkbenchError):
    pass


class MissingCondition(WorkbenchError):
    pass


class ConfigError(WorkbenchError):
    pass


class TemplateError(WorkbenchError):
    pass
