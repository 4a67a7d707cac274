"""Finite-dimensional laboratory for relational quantum dynamics.

Submodules: ``operators`` (dense linear algebra), ``clock`` (finite cyclic
clock), ``universe`` (models, rate operator, unitarity conditions),
``dynamics`` (stationary and relative states, propagator), ``observables``
(two-clock rate and variance laws), ``equivalence`` (equivalent first-order
constraints) and ``scenarios`` / ``cli`` (configs, gallery, CSV output).
"""
from __future__ import annotations

__version__ = "0.1.0"

from .clock import FiniteClock, IdealnessReport, idealness_report, make_clock, projector_at  # noqa: E402
from .universe import (  # noqa: E402
    ConditionReport,
    RateOperator,
    UniverseModel,
    Verdict,
    build_additive,
    build_custom,
    build_mass_energy,
    build_product,
    check_conditions,
    rate_operator,
)

__all__ = [
    "__version__",
    "FiniteClock",
    "IdealnessReport",
    "make_clock",
    "projector_at",
    "idealness_report",
    "UniverseModel",
    "RateOperator",
    "ConditionReport",
    "Verdict",
    "build_additive",
    "build_product",
    "build_mass_energy",
    "build_custom",
    "rate_operator",
    "check_conditions",
]
