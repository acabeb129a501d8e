"""Exception types shared across the lab.

Numerical failures carry enough context (and, where applicable, partial
results) for the CLI to persist a failed-run marker instead of losing the
whole experiment.
"""


class KdvLabError(Exception):
    """Base class for all lab-specific errors."""


class StepUnstable(KdvLabError):
    """Time step produced norm growth beyond the configured factor.

    Raised only after adaptive halving is exhausted.  The partial trajectory
    accumulated so far is attached as ``trajectory`` when available.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class Unresolved(KdvLabError):
    """Spectral tail energy exceeds the resolution tolerance."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class IntegrationFailure(KdvLabError):
    """Transfer-matrix integration produced non-finite or inconsistent data."""


class RootBracketFailure(KdvLabError):
    """Eigenvalue interlacing could not be established; raise resolution."""


class ClosedGap(KdvLabError):
    """Requested gradient of an action whose spectral gap is closed."""


class UnsupportedOrder(KdvLabError):
    """Conservation-law order outside the implemented hierarchy."""


class ResonantRepresentative(KdvLabError):
    """Frequency vector of the averaging representative failed the
    nonresonance screen; perturb the actions and retry."""


class EvaluatorFailure(KdvLabError):
    """Averaged-field evaluator could not produce a rate vector."""


class ConfigInvalid(KdvLabError):
    """Experiment configuration rejected; ``diagnostics`` lists the issues."""

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
