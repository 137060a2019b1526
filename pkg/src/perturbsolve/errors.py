"""Exception types shared across the pipeline."""


class DimensionError(ValueError):
    pass


class NestingError(ValueError):
    pass


class NotOntoError(ValueError):
    """Raised when an operator that must be surjective is rank deficient."""

    def __init__(self, message, singular_values=None):
        super().__init__(message)
        self.singular_values = singular_values


class HypothesisError(ValueError):
    """The containment hypothesis K <= (1/2) V does not hold."""

    def __init__(self, message, factor):
        super().__init__(message)
        self.factor = factor


class PreimageError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CoverError(RuntimeError):
    def __init__(self, message, net=None, radius=None):
        super().__init__(message)
        self.net = net
        self.radius = radius


class ScheduleError(RuntimeError):
    def __init__(self, message, p=None, worst_y=None, worst_ratio=None):
        super().__init__(message)
        self.p = p
        self.worst_y = worst_y
        self.worst_ratio = worst_ratio


class IterationError(RuntimeError):
    """Iteration stopped early; ``trace`` holds everything computed so far."""

    def __init__(self, message, trace=None, step=None, ratios=None):
        super().__init__(message)
        self.trace = trace
        self.step = step
        self.ratios = ratios


class ScenarioError(ValueError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class PipelineError(RuntimeError):
    def __init__(self, stage, message, detail=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = detail or {}
