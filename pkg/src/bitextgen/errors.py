"""Exception types shared across the pipeline."""
from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PipelineError):
    """Bad or missing configuration: unknown profile, language name, 4xx response."""


class ContractError(PipelineError):
    """Caller violated an operation's preconditions."""


class TransportError(PipelineError):
    """Network-level failure that survived the retry policy."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class EmptyOutputError(PipelineError):
    """Backend returned an empty completion."""


class CapabilityError(PipelineError):
    """Backend does not support the requested language direction."""

    def __init__(self, direction: tuple[str, str]):
        super().__init__(f"backend does not support direction {direction[0]} -> {direction[1]}")
        self.direction = direction


class PoolExhaustedError(PipelineError):
    """A seed pool is too small for the requested sample size."""


class TrainingError(PipelineError):
    """Language-ID training cannot proceed (e.g. a language with zero seeds)."""


class ManifestParseError(PipelineError):
    """Manifest file unreadable or ill-formed (distinct from invariant violations)."""


class PreconditionError(PipelineError):
    """A pipeline stage is missing a prerequisite artifact."""


class RunFailureError(PipelineError):
    """Too many per-item failures for the run to be trusted."""


class TrainerError(PipelineError):
    """External trainer hook failed; round state preserved for resume."""


class IntegrationError(PipelineError):
    """An external hook violated its line protocol."""
