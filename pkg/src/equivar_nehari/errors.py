"""Exception types raised across the package."""


class EquivarNehariError(Exception):
    """Base class for all package errors."""


class ExponentRangeError(EquivarNehariError, ValueError):
    """Exponent ``p`` is not subcritical for the requested dimension."""


class BracketError(EquivarNehariError, RuntimeError):
    """Shooting could not bracket the ground-state height."""


class ConvergenceError(EquivarNehariError, RuntimeError):
    """An iterative method exhausted its budget."""


class MeshError(EquivarNehariError, ValueError):
    """Invalid mesh, pairing, or tensor field."""


class BallOverlapError(EquivarNehariError, ValueError):
    """A geodesic ball around ``q`` would meet its image around ``tau(q)``."""


class ZeroFieldError(EquivarNehariError, ValueError):
    """Operation needs a field that does not vanish identically."""
