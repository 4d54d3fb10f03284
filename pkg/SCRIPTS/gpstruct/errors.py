"""
Error types shared by the gpstruct library and CLI.

Every error carries a short machine-readable ``code`` and the exit status the
CLI uses when it surfaces the error. Subclasses also inherit the builtin they
refine, so callers can keep catching ValueError / RuntimeError.
"""


class GPStructError(Exception):
    """Base class for all gpstruct failures."""

    code = "gpstruct-error"
    exit_status = 1

    def __init__(self, message: str, code: str = None):
        super().__init__(message)
        if code:
            self.code = code


class ConfigError(GPStructError, ValueError):
    code = "config"
    exit_status = 2


class CorpusFormatError(GPStructError, ValueError):
    """Malformed data file or inconsistent corpus."""

    code = "corpus-format"
    exit_status = 3


class InsufficientDataError(GPStructError, ValueError):
    code = "insufficient-data"
    exit_status = 3


class KernelFactorizationError(GPStructError, RuntimeError):
    """Cholesky failed: matrix not numerically positive definite."""

    code = "factorization"
    exit_status = 4


class ShrinkLimitError(GPStructError, RuntimeError):
    code = "ess-shrink-limit"
    exit_status = 4


class CheckpointError(GPStructError, RuntimeError):
    code = "checkpoint"
    exit_status = 5
