"""Exception types shared across the package."""


class PirhcError(Exception):
    """Base class for all package errors."""


class NumericalBlowupError(PirhcError):
    """A simulated state or increment became non-finite.

    ``step_index`` is the index of the integration step at which the first
    non-finite component appeared (None when unknown, e.g. single-step use).
    """

    def __init__(self, message, step_index=None, state=None):
        super().__init__(message)
        self.step_index = step_index
        self.state = state


class CouplingViolationError(PirhcError):
    """No positive gamma relates the control-cost geometry to the noise
    covariance within tolerance; the path-integral estimator must refuse
    to run."""

    def __init__(self, message, gamma=None, residual_norm=None):
        super().__init__(message)
        self.gamma = gamma
        self.residual_norm = residual_norm


class DegenerateWeightsError(PirhcError):
    """Importance weights collapsed: effective sample size fell below the
    configured floor, or no rollout produced a finite weight."""

    def __init__(self, message, ess=None, step_index=None):
        super().__init__(message)
        self.ess = ess
        self.step_index = step_index


class AllRolloutsFailedError(PirhcError):
    """Every Monte Carlo rollout blew up; nothing left to average."""


class GainRankError(PirhcError):
    """The control gain matrix lost full column rank at a visited state, so
    its left-inverse is undefined."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class RiccatiSolveError(PirhcError):
    """Backward Riccati integration did not meet the residual tolerance."""


class NoTransientError(PirhcError):
    """Moment curve never exceeds its plateau on the transient window, so
    no decay rate can be fitted."""


class ConfigError(PirhcError):
    """Scenario configuration failed validation."""
