"""Sum-of-squares certificates for switched and difference-inclusion systems."""

from .poly import Polynomial, PolynomialMap, SwitchedSystem
from .sosprog import Infeasible, SosProgram, Unknown, check_sos, check_sosconvex

__all__ = [
    "Infeasible",
    "Polynomial",
    "PolynomialMap",
    "SosProgram",
    "SwitchedSystem",
    "Unknown",
    "check_sos",
    "check_sosconvex",
]

__version__ = "0.1.0"
