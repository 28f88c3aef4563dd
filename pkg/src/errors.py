"""
Error types for the substitution toolkit.
Every failure a module can report has a class here; `code` is the name
printed by the CLI on standard error.
"""

from typing import Optional


class SubstitutionError(Exception):
    """Base class for every domain error"""

    code = "SUBSTITUTION_ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code

    def __str__(self):
        return f"{self.code}: {self.message}"


class ConfigError(Exception):
    """Configuration file missing, unparseable, or invalid (CLI exit 2)"""

    code = "CONFIG_ERROR"


# core
class EmptyTextError(SubstitutionError):
    code = "EMPTY_TEXT"


class BadSiteError(SubstitutionError):
    code = "BAD_SITE"


# scorer
class BackendFailureError(SubstitutionError):
    code = "BACKEND_FAILURE"


class LengthOverflowError(SubstitutionError):
    code = "LENGTH_OVERFLOW"


class CacheIOError(SubstitutionError):
    code = "CACHE_IO"


# stats / metrics
class EmptyReferenceError(SubstitutionError):
    code = "EMPTY_REFERENCE"


class EmptyInputError(SubstitutionError):
    code = "EMPTY_INPUT"


class LengthMismatchError(SubstitutionError):
    code = "LENGTH_MISMATCH"


class ConstantInputError(SubstitutionError):
    code = "CONSTANT_INPUT"


class ZeroVectorError(SubstitutionError):
    code = "ZERO_VECTOR"


class ZeroOriginalScoreError(SubstitutionError):
    code = "ZERO_ORIGINAL_SCORE"


# losses
class UnsortedBatchError(SubstitutionError):
    code = "UNSORTED_BATCH"


class MissingReferenceError(SubstitutionError):
    code = "MISSING_REFERENCE"


class IndexOutOfRangeError(SubstitutionError):
    code = "INDEX_OUT_OF_RANGE"


# candidates / subst
class NoEligibleSitesError(SubstitutionError):
    code = "NO_ELIGIBLE_SITES"


class ModelFailureError(SubstitutionError):
    code = "MODEL_FAILURE"


class MissingOriginalProbError(SubstitutionError):
    code = "MISSING_ORIGINAL_PROB"


# train
class CopyFailureError(SubstitutionError):
    code = "COPY_FAILURE"


class DivergenceError(SubstitutionError):
    code = "DIVERGENCE"

    def __init__(self, message: str = "", last_checkpoint: Optional[str] = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


# data
class ParseError(SubstitutionError):
    code = "PARSE_ERROR"

    def __init__(self, message: str = "", line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class UnknownFormatError(SubstitutionError):
    code = "UNKNOWN_FORMAT"


# llm_baselines
class MalformedResponseError(SubstitutionError):
    code = "MALFORMED_RESPONSE"

    def __init__(self, message: str = "", attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class ClientError(SubstitutionError):
    code = "CLIENT_ERROR"
