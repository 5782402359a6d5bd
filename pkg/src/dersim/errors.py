"""Exception types shared across the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class DegenerateEdge(SimError):
    """An edge of the rod centerline has (near-)zero length."""


class AntiparallelTangents(SimError):
    """Two consecutive edge tangents are antiparallel; curvature is undefined."""


class UnsupportedPair(SimError):
    """No narrow-phase routine exists for this shape pair."""


class ResolutionTooCoarse(SimError):
    """A pressure mesh has no interior vertex to carry the peak pressure."""


class DegenerateGradient(SimError):
    """The pressure-difference field is (near-)constant inside an overlapping tet pair."""


class NewtonDivergence(SimError):
    """The free-motion Newton solve exhausted its iterations without converging."""


class FactorizationFailure(SimError):
    """A matrix expected to be positive definite could not be factorized."""


class MaxIterations(SimError):
    """Iterative solver hit its iteration cap.

    Carries the best iterate found so far in ``result`` so the caller can decide
    whether to accept it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class UnknownScenario(SimError):
    """Scenario builder name not recognized."""


class ParseError(SimError):
    """Scene text could not be tokenized/parsed."""


class ValidationError(SimError):
    """Scene parsed but violates the schema; carries per-field diagnostics."""

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class StepFailure(SimError):
    """A simulation step failed; wraps the underlying error with the step index."""

    def __init__(self, step, stage, cause):
        self.step = step
        self.stage = stage
        self.cause = cause
        super().__init__(f"step {step} failed in {stage}: {cause}")
