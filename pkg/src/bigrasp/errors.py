"""Exception hierarchy shared by all bigrasp modules."""


class BigraspError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(BigraspError, ValueError):
    pass


class InvalidMesh(BigraspError, ValueError):
    pass


class ShapeError(BigraspError, ValueError):
    pass


class InvalidCost(BigraspError, ValueError):
    pass


class DegenerateGrasp(BigraspError):
    """A grasp (or grasp pair) produced too few contacts to be scored."""


class EmptyTargets(BigraspError, ValueError):
    pass


class TrainingDiverged(BigraspError, FloatingPointError):
    pass


class WeightsMismatch(BigraspError):
    """A weights file does not match the model configuration it is loaded into."""
