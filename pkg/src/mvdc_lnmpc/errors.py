"""Exception types raised across the package."""


class MvdcError(Exception):
    """Base class for every error raised by this package."""


class VoltageFloorViolation(MvdcError):
    """Bus voltage dropped below the floor used to guard the CPL term."""

    def __init__(self, v_o, v_floor):
        super().__init__(f"bus voltage {v_o:.6g} V below floor {v_floor:.6g} V")
        self.v_o = v_o
        self.v_floor = v_floor


class NoConvergence(MvdcError):
    """An iterative routine exhausted its iteration budget."""


class UnstableClosedLoop(MvdcError):
    pass


class SingularSystem(MvdcError):
    pass


class NotSymmetric(MvdcError):
    pass


class NonFiniteEvaluation(MvdcError):
    """A callback returned NaN or inf."""

    def __init__(self, message, z=None):
        super().__init__(message)
        self.z = z


class InfeasibleQp(MvdcError):
    pass


class AlphaDegenerate(MvdcError):
    """No positive terminal-set level passed the invariance check."""


class SolverFailed(MvdcError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ZeroDesiredValue(MvdcError):
    pass


class NeverSettles(MvdcError):
    pass


class ScenarioMismatch(MvdcError):
    pass
