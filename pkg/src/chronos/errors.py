"""Exception hierarchy shared by all chronos modules."""


class ChronosError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(ChronosError, ValueError):
    pass


class NotHermitian(ChronosError, ValueError):
    pass


class InvalidClock(ChronosError, ValueError):
    pass


class NonCommutingFactors(ChronosError, ValueError):
    pass


class EmptyKernel(ChronosError):
    """The constraint has no 0-eigenvectors at the requested tolerance."""


class SeedAnnihilated(ChronosError):
    """The seed has numerically zero overlap with the physical subspace."""


class InvertibleAlpha(ChronosError):
    """A kernel-branch check was requested but the rate operator is invertible."""


class NonUnitaryWitness(ChronosError):
    """The allowed states do not share one unitary propagator.

    ``defect`` carries the measured deviation (isometry or fit defect).
    """

    def __init__(self, message: str, defect: float):
        super().__init__(message)
        self.defect = defect


class GridTooSmall(ChronosError, ValueError):
    pass


class GridMismatch(ChronosError, ValueError):
    pass


class ConfigError(ChronosError, ValueError):
    """Schema violation; ``path`` names the offending field (e.g. ``clock.dt``)."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ScenarioFailure(ChronosError):
    """A numerical stage of a scenario run failed; ``__cause__`` holds the original error."""

    def __init__(self, scenario: str, stage: str, cause: Exception):
        super().__init__(f"scenario {scenario!r}, stage {stage}: {type(cause).__name__}: {cause}")
        self.scenario = scenario
        self.stage = stage
