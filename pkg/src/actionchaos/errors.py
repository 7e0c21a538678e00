"""Exception and warning hierarchy shared by all modules."""


class ActionChaosError(Exception):
    """Base class for toolkit errors."""


class ConfigError(ActionChaosError, ValueError):
    """Invalid configuration value or combination of values."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class PotentialError(ActionChaosError, ValueError):
    pass


class ParityError(PotentialError):
    pass


class InvalidTrajectoryError(ActionChaosError, ValueError):
    pass


class SolverFailure(ActionChaosError, RuntimeError):
    """Base for numerical solvers that did not converge."""


class BVPFailure(SolverFailure):
    def __init__(self, message, best_residual=float("nan")):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class BlowUpError(SolverFailure):
    def __init__(self, message, last_valid_time):
        super().__init__(f"{message} (last valid time {last_valid_time:.6g})")
        self.last_valid_time = last_valid_time


class CausticSingularityError(ActionChaosError, ValueError):
    pass


class InvalidGridError(ConfigError):
    pass


class OverlapRiskError(ConfigError):
    pass


class AssemblyError(SolverFailure):
    def __init__(self, message, pair):
        super().__init__(f"{message} at node pair {pair}")
        self.pair = pair


class EigensolverError(SolverFailure):
    pass


class GroundStateSolverError(SolverFailure):
    pass


class UnfoldingDegeneracyError(ActionChaosError, ValueError):
    pass


class InsufficientDataError(ActionChaosError, ValueError):
    pass


class FitDegenerateError(ActionChaosError, ValueError):
    pass


class DomainError(ActionChaosError, ValueError):
    pass


class PerturbationDomainError(ActionChaosError, ValueError):
    pass


class CausticWarning(UserWarning):
    pass


class QuadratureWarning(UserWarning):
    pass


class SmallnessWarning(UserWarning):
    pass


class SmallSampleWarning(UserWarning):
    pass


class RankDeficiencyWarning(UserWarning):
    """Most eigenvalues of a spectrum sit at the floating-point noise floor."""
