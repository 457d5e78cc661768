"""Exception hierarchy shared by all modules."""


class MaximinError(Exception):
    """Base class for every error raised by this package."""


class InvalidDomain(MaximinError, ValueError):
    pass


class InvalidUtility(MaximinError, ValueError):
    pass


class UnboundedDual(MaximinError, ValueError):
    """The pointwise dual problem has supremum +inf (inadmissible multiplier)."""


class InvalidC0(MaximinError, ValueError):
    pass


class QuadratureOverflow(MaximinError, FloatingPointError):
    pass


class SingularTridiagonal(MaximinError, ArithmeticError):
    pass


class DegenerateVolatility(MaximinError, ValueError):
    """No row subset of sigma is well conditioned enough to invert."""


class ArbitrageInconsistent(MaximinError, ValueError):
    """Some asset's excess drift is not spanned by the volatility rows."""


class RandomR(MaximinError, ValueError):
    """The squared market price of risk depends on the path."""


class InvalidGrid(MaximinError, ValueError):
    pass


class InvalidMaturities(MaximinError, ValueError):
    pass


class InvalidStrike(MaximinError, ValueError):
    pass


class ExpiredOption(MaximinError, ValueError):
    pass


class NoBracket(MaximinError, ValueError):
    pass


class NonMonotonePrice(MaximinError, ArithmeticError):
    pass


class CalibrationFailed(MaximinError, RuntimeError):
    pass


class SingularCovariance(MaximinError, ValueError):
    pass


class DimensionMismatch(MaximinError, ValueError):
    pass


class ParseError(MaximinError, ValueError):
    """Config file problem; ``str()`` carries the line or field path."""

    def __init__(self, message, *, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field
