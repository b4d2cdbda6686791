"""Exception types raised across the package."""


class ManifoldError(ValueError):
    """Invalid manifold operation (mismatched points, bad shapes)."""


class OutsideInjectivityRadius(ManifoldError):
    """Logarithm or transport requested between points that are too far apart."""


class NotLocallyComparable(ManifoldError):
    """Some edge of a configuration spans the cut locus."""


class GraphNotConnected(ValueError):
    pass


class DegenerateSpectrum(ValueError):
    """Target eigenvalue (or eigenspace) is not separated from the rest."""


class ConvergenceError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass
