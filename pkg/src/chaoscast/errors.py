"""Exception types raised across the package."""

import numpy as np


class ChaoscastError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(ChaoscastError, ValueError):
    pass


class NonFiniteStateError(ChaoscastError, FloatingPointError):
    pass


class SimulationBlowupError(ChaoscastError, RuntimeError):
    pass


class InvalidRankError(ChaoscastError, ValueError):
    pass


class DegenerateReservoirError(ChaoscastError, RuntimeError):
    pass


class RankDeficiencyError(ChaoscastError, np.linalg.LinAlgError):
    """Raised when the unregularized readout system is singular.

    ``deficiency`` holds the number of numerically zero eigenvalues.
    """

    def __init__(self, deficiency, size):
        self.deficiency = deficiency
        self.size = size
        super().__init__(
            f"readout system is rank deficient: {deficiency} of {size} "
            "dimensions have zero energy; use eta > 0"
        )


class TrainingDivergenceError(ChaoscastError, FloatingPointError):
    pass


class InvalidDecompositionError(ChaoscastError, ValueError):
    pass


class MemberTrainingError(ChaoscastError, RuntimeError):
    def __init__(self, group_id, cause):
        self.group_id = group_id
        self.cause = cause
        super().__init__(f"group {group_id}: {cause}")


class UnsupportedModelError(ChaoscastError, TypeError):
    pass


class LyapunovDivergenceError(ChaoscastError, RuntimeError):
    """Closed-loop trajectory left the bounded region; ``partial`` keeps the history."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InvalidNormalizationError(ChaoscastError, ValueError):
    pass


class ConfigError(ChaoscastError, ValueError):
    pass


class BundleError(ChaoscastError, ValueError):
    pass


class BundleMagicError(BundleError):
    pass


class BundleVersionError(BundleError):
    pass


class BundleTruncatedError(BundleError):
    pass


class BundleDimensionError(BundleError):
    pass


class ExperimentError(ChaoscastError, RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
