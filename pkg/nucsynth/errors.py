"""Error kinds raised across nucsynth. All derive from ValueError."""


class NucsynthError(ValueError):
    pass


class DimensionError(NucsynthError):
    """Field size is zero or not representable by the requested generator."""


class ParameterError(NucsynthError):
    """A numeric parameter is outside its documented range."""


class GeometryError(NucsynthError):
    """Degenerate polygon input (zero length, too few vertices)."""


class PlacementError(NucsynthError):
    def __init__(self, achieved: int, target: int, msg: str | None = None):
        self.achieved = achieved
        self.target = target
        super().__init__(msg or f"[layout] placed only {achieved} of {target} nuclei before the attempt budget ran out")


class MeasurementError(NucsynthError):
    pass


class DegenerateError(NucsynthError):
    """Region or histogram carries too little information for the estimator."""


class InsufficientSpectrumError(DegenerateError):
    pass


class InputError(NucsynthError):
    """Caller-supplied data (files, arrays, labels) is malformed or inconsistent."""
