from typing import List, Optional


class LossBenchError(Exception):
    pass


class DomainError(LossBenchError, ValueError):
    """Parameters or arguments outside the domain of the model."""


class ConvergenceError(LossBenchError):
    def __init__(self, message: str, estimate: float, error_bound: float):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound

    def __str__(self):
        return (
            f"{super().__str__()}\n"
            f"best estimate {self.estimate!r} with error bound {self.error_bound!r}"
        )


class UnsupportedDimensionError(LossBenchError):
    pass


class SingularCovarianceError(LossBenchError):
    pass


class NoRootError(LossBenchError):
    def __init__(self, message: str, target: float, attainable: tuple):
        super().__init__(message)
        self.target = target
        self.attainable = attainable

    def __str__(self):
        lo, hi = self.attainable
        return f"{super().__str__()}\ntarget {self.target!r} outside ({lo!r}, {hi!r})"


class MultipleRootsError(LossBenchError):
    def __init__(self, message: str, roots: List[float]):
        super().__init__(message)
        self.roots = roots

    def __str__(self):
        return f"{super().__str__()}\nroots {self.roots!r}"


class UndefinedCorrelationError(LossBenchError):
    pass


class InconclusiveFitError(LossBenchError):
    pass


class BudgetExceededError(LossBenchError):
    pass


class ScenarioError(LossBenchError):
    def __init__(self, message: str, pointers: Optional[List[str]] = None):
        super().__init__(message)
        self.pointers = pointers or []

    def __str__(self):
        return "\n".join([super().__str__()] + [f"  at {p}" for p in self.pointers])


class AccuracyWarning(UserWarning):
    """Second order approximation used outside its regime of validity."""


class NearSingularWarning(UserWarning):
    pass


class RootAnomalyWarning(UserWarning):
    pass
