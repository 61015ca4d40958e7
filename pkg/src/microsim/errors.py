"""Exception types shared by the simulator modules.

Every error carries a short machine-readable ``code`` (``SYNTAX``,
``UNKNOWN_KEY``, ``NON_MONOTONIC_SEQ``, ...) so callers and the CLI can branch
on the failure kind without string matching.
"""

from __future__ import annotations


class MicrosimError(Exception):
    def __init__(self, code: str, message: str, *, line: int | None = None):
        self.code = code
        self.line = line
        self.detail = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(f"{code}: {message}")


class ConfigError(MicrosimError):
    pass


class TraceError(MicrosimError):
    def __init__(self, code: str, message: str, *, line: int | None = None,
                 thread: int | None = None):
        self.thread = thread
        self.raw = message
        if thread is not None:
            message = f"thread {thread}: {message}"
        super().__init__(code, message, line=line)


class PredictorError(MicrosimError):
    pass


class SimulationError(MicrosimError):
    pass


class ValidationError(MicrosimError):
    pass
