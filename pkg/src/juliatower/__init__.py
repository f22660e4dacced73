"""Thermodynamic formalism for polynomial Misiurewicz families.

Pressure and Hausdorff dimension of Julia sets from preimage trees,
holomorphic motions along parameter families, an induced tower with its
transfer operators, and a Weil-Petersson type metric on parameter space.
"""
from .errors import JuliaTowerError, NumericalFailure, ValidationError
from .family import (FamilySpec, MisiurewiczParam, Relation, cubic_pm_a_family,
                     family_from_expression, quadratic_family, solve_critical_relation)
from .poly import Polynomial, green_function, lyapunov_exponent, periodic_points
from .pressure import bowen_dimension, joint_pressure, pressure_estimate

__version__ = "0.1.0"

__all__ = [
    "JuliaTowerError", "NumericalFailure", "ValidationError",
    "FamilySpec", "MisiurewiczParam", "Relation", "cubic_pm_a_family",
    "family_from_expression", "quadratic_family", "solve_critical_relation",
    "Polynomial", "green_function", "lyapunov_exponent", "periodic_points",
    "bowen_dimension", "joint_pressure", "pressure_estimate",
]
