class HopeError(ValueError):
    """Base class for all invalid-input and numerical failures raised by hope."""


class EstimatorError(HopeError):
    pass


class RoutingError(HopeError):
    pass


class SubspaceError(HopeError):
    pass


class GraphError(HopeError):
    pass


class TrackingError(HopeError):
    pass


class ScenarioError(HopeError):
    pass


class FormatError(HopeError):
    pass


class BenchError(HopeError):
    pass
