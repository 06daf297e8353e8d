"""Exception hierarchy shared by all solver modules."""


class FSIError(Exception):
    """Base class; ``exit_code`` is used by the command line front end."""

    exit_code = 3


class SchemaError(FSIError):
    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NotConverged(FSIError):
    pass


class OutsideCollar(FSIError):
    pass


class DegenerateMap(FSIError):
    exit_code = 4


class CollarViolation(FSIError):
    exit_code = 4


class RootFindFailure(FSIError):
    pass


class DimensionMismatch(FSIError):
    pass


class NotCoercive(FSIError):
    pass


class IncompatibleFlux(FSIError):
    pass


class SolverStagnation(FSIError):
    pass


class IllConditioned(FSIError):
    pass


class ContractError(FSIError):
    pass


class SingularStageMatrix(FSIError):
    pass


class NearResonance(FSIError):
    pass


class PicardStagnation(FSIError):
    pass


class DomainDegeneration(FSIError):
    exit_code = 4

    def __init__(self, message, trip_time=None):
        super().__init__(message)
        self.trip_time = trip_time


class LeftAdmissibleSet(FSIError):
    exit_code = 4

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class BudgetExceeded(FSIError):
    exit_code = 4


class NoConvergence(FSIError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []
