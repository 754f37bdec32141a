"""Exception hierarchy shared across the engine.

Every error raised on a contract boundary derives from CceError so callers can
catch engine failures without swallowing programming errors.
"""

from __future__ import annotations


class CceError(Exception):
    """Base class for all engine errors."""


# --- formula / dimension layer ---------------------------------------------

class FormulaSyntaxError(CceError):
    """Malformed formula or rule source. Carries position and expectation."""

    def __init__(self, message: str, position: int = -1, expected: str = ""):
        self.position = position
        self.expected = expected
        loc = f" at {position}" if position >= 0 else ""
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"{message}{loc}{hint}")


class DimensionError(CceError):
    """Dimensionally inconsistent expression or mismatched binding."""


class UnknownSymbolError(CceError):
    """Expression references a symbol absent from the declaration list."""


class UnknownUnitError(CceError):
    """Unit label not present in the SI unit table."""


class MissingBindingError(CceError):
    """A free variable was left unbound at evaluation time."""


class MathDomainError(CceError):
    """Evaluation left the real domain (log of non-positive, zero division)."""


class EmptyKnowledgeBaseError(CceError):
    """Retrieval attempted against a knowledge base with no formulas."""


class FallbackExhaustedError(CceError):
    """Formula-name regeneration ran out of rounds or candidates."""


# --- event chain layer ------------------------------------------------------

class EvaluationError(CceError):
    """A formula could not be evaluated at a trajectory sample."""

    def __init__(self, message: str, sample_index: int = -1):
        self.sample_index = sample_index
        super().__init__(message)


class UnstableIntegrationError(CceError):
    """A simulated quantity became non-finite."""

    def __init__(self, message: str, sample_index: int):
        self.sample_index = sample_index
        super().__init__(f"{message} (sample {sample_index})")


class DegenerateTrajectoryError(CceError):
    """Boundary detection needs at least two samples."""


class ReInferenceExhaustedError(CceError):
    """Continuity repair loop hit its retry budget with violations left."""

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


# --- scene graph layer ------------------------------------------------------

class GraphSchemaError(CceError):
    """A graph or delta violates a structural invariant."""


class RuleConflictError(CceError):
    """Two update rules wrote different values to one attribute."""


class StaleDeltaError(CceError):
    """Delta old-values do not match the graph it is being applied to."""


class UnknownNodeError(CceError):
    """An operation referenced a node id absent from the graph."""


# --- narrative / prompt layer -----------------------------------------------

class NarrativeValidationError(CceError):
    """Backend text failed object-mention or forbidden-word validation."""

    def __init__(self, message: str, missing=(), forbidden=()):
        self.missing = tuple(missing)
        self.forbidden = tuple(forbidden)
        super().__init__(message)


class BudgetError(CceError):
    """Even the first event clause exceeds the token budget."""


# --- keyframe / latent layer --------------------------------------------------

class LengthMismatchError(CceError):
    """Interpolation endpoints have different vector lengths."""


class ImageShapeError(CceError):
    """Backend returned an image whose dimensions differ from the run config."""


class TargetLengthInfeasibleError(CceError):
    """Keyframe count alone exceeds the target latent frame count."""


# --- backends -----------------------------------------------------------------

class BackendError(CceError):
    """Transport or remote failure talking to a model backend."""

    def __init__(self, message: str, attempts: int = 1, code: str = "transport"):
        self.attempts = attempts
        self.code = code
        super().__init__(message)


class SchemaError(CceError):
    """Backend payload failed schema validation after the retry budget."""


class DimensionMismatchError(CceError):
    """Encoder returned a vector whose length differs from its declared dim."""


# --- pipeline ------------------------------------------------------------------

class ConfigError(CceError):
    """Invalid run configuration or config file."""


class StageError(CceError):
    """A pipeline step failed or a manifest invariant was violated."""

    def __init__(self, message: str, stage: str = "", cause: Exception = None):
        self.stage = stage
        self.cause = cause
        super().__init__(message)
