"""Exception types raised by validation and solvers."""


class MMFlowError(Exception):
    """Base class for all mmflow errors."""


class TriangleViolation(MMFlowError):
    def __init__(self, i, j, k, dik, dij, djk):
        self.witness = (i, j, k)
        super().__init__(
            f"triangle inequality violated: d({i},{k})={dik!r} > "
            f"d({i},{j})+d({j},{k})={dij + djk!r}"
        )


class AsymmetricDistance(MMFlowError):
    pass


class NonpositiveMass(MMFlowError):
    pass


class DisconnectedGraph(MMFlowError):
    pass


class BadSpec(MMFlowError):
    pass


class Infeasible(MMFlowError):
    pass


class DegenerateBasis(MMFlowError):
    pass


class Unrepresentable(MMFlowError):
    pass


class SingularForm(MMFlowError):
    pass


class NonMonotoneQuotient(MMFlowError):
    pass


class NotCConcave(MMFlowError):
    pass


class EndpointMismatch(MMFlowError):
    pass


class MarginalMismatch(MMFlowError):
    pass


class BadIndices(MMFlowError):
    pass


class UnsupportedSpace(MMFlowError):
    pass


class SolverFailure(MMFlowError):
    pass


class BadInitial(MMFlowError):
    pass
