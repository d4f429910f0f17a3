"""Exception hierarchy.

``ValidationError`` subclasses signal bad input (CLI exit code 2);
``SolverError`` subclasses signal numerical failure (exit code 3).
"""


class PolystabError(Exception):
    pass


class ValidationError(PolystabError):
    pass


class SolverError(PolystabError):
    pass


class InvalidAprioriData(ValidationError):
    pass


class InvalidBackground(ValidationError):
    pass


class InvalidPolygon(ValidationError):
    pass


class GeometryFormatError(ValidationError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DistanceTooLarge(ValidationError):
    pass


class VertexCountMismatch(ValidationError):
    pass


class CrossingMismatch(ValidationError):
    pass


class VertexOnInterface(ValidationError):
    pass


class StripCollision(ValidationError):
    pass


class DisplacementBoundViolation(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class GramMismatch(ValidationError):
    pass


class SourceOnInterface(ValidationError):
    pass


class SourceTooCloseToVertex(ValidationError):
    pass


class OffsetOutOfRange(ValidationError):
    pass


class InfeasibleProjection(ValidationError):
    pass


class NonConformingMesh(SolverError):
    pass


class RefinementStall(SolverError):
    pass


class SolverBreakdown(SolverError):
    pass


class SingularJacobian(SolverError):
    pass
