"""Exception hierarchy shared by every module."""


class LorentzLabError(Exception):
    """Base class for all library errors."""


# geometry
class OverlappingScatterers(LorentzLabError):
    def __init__(self, pair, message=None):
        self.pair = tuple(pair)
        super().__init__(message or f"scatterers {self.pair[0]} and {self.pair[1]} overlap")


class BoundaryTouchesCell(LorentzLabError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"scatterer {index} touches the cell boundary")


class NonPositiveRadius(LorentzLabError):
    def __init__(self, index, radius):
        self.index = index
        self.radius = radius
        super().__init__(f"scatterer {index} has non-positive radius {radius!r}")


class FiniteHorizon(LorentzLabError):
    """Raised where corridor data is required but the horizon is finite."""


# dynamics
class HorizonEscape(LorentzLabError):
    def __init__(self, max_cells, step=None):
        self.max_cells = max_cells
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"no collision within {max_cells} traversed cells{where}")


class NumericalDegeneracy(LorentzLabError):
    def __init__(self, step=None):
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"grazing collision (discriminant below tolerance){where}")


# statistics
class InsufficientSamples(LorentzLabError):
    pass


class FiniteHorizonNoTail(LorentzLabError):
    pass


class DegenerateVariance(LorentzLabError):
    def __init__(self, sigma2, tol):
        self.sigma2 = sigma2
        self.tol = tol
        super().__init__(f"fitted variance {sigma2:.3e} below {tol:.1e}: observable looks like a coboundary")


# oracles
class WindowOverflow(LorentzLabError):
    pass


class ParityViolation(LorentzLabError):
    pass


class ParameterOrder(LorentzLabError):
    pass


# tower
class NonMarkovBase(LorentzLabError):
    pass


class TruncationTooHeavy(LorentzLabError):
    pass


class ResolutionTooCoarse(LorentzLabError):
    pass


class NoGap(LorentzLabError):
    pass


# io
class ConfigError(LorentzLabError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class Mismatch(LorentzLabError):
    def __init__(self, path, message=None):
        self.path = path
        super().__init__(message or f"artifact differs: {path}")
