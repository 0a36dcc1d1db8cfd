"""Exception hierarchy shared by every module.

Each error carries a stable ``code`` so the CLI can emit machine-readable
error JSON without pattern-matching on messages.
"""

from __future__ import annotations


class DsoError(Exception):
    code = "DsoError"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class MalformedPtx(DsoError):
    code = "MalformedPtx"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyTrace(DsoError):
    code = "EmptyTrace"


class OutOfRange(DsoError):
    code = "OutOfRange"

    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


class SchemaMismatch(DsoError):
    code = "SchemaMismatch"


class NonPositivePower(DsoError):
    code = "NonPositivePower"


class InvalidParams(DsoError):
    code = "InvalidParams"


class EtaOutOfRange(DsoError):
    code = "EtaOutOfRange"


class VoltageBelowKappa(DsoError):
    code = "VoltageBelowKappa"


class FrequencyBelowKappa(DsoError):
    code = "FrequencyBelowKappa"


class RankDeficient(DsoError):
    code = "RankDeficient"


class Underdetermined(DsoError):
    code = "Underdetermined"


class DatasetTooSmall(DsoError):
    code = "DatasetTooSmall"


class InvalidDomain(DsoError):
    code = "InvalidDomain"


class InfeasibleDomain(DsoError):
    code = "InfeasibleDomain"


class OracleMismatch(DsoError):
    code = "OracleMismatch"


class KernelError(DsoError):
    """Wraps a module error raised while processing one named kernel."""

    code = "KernelError"

    def __init__(self, kernel: str, cause: DsoError):
        super().__init__(f"{kernel}: [{cause.code}] {cause}")
        self.kernel = kernel
        self.cause = cause

    def to_dict(self) -> dict:
        return {"error": self.cause.code, "kernel": self.kernel, "message": str(self.cause)}
