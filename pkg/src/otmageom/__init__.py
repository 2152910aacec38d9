"""Pseudo-Riemannian geometry of optimal transport and Monge-Ampere structures on R^3 x R^3."""

from otmageom.errors import (
    ConfigError,
    DegenerateStructureError,
    DomainError,
    MapRecoveryError,
)
from otmageom.exterior import AltForm, GraphSection, interior_product, pullback_by_section, wedge
from otmageom.fields import (
    CostFunction,
    Density,
    ScalarField,
    gradient,
    hessian,
    mixed_hessian,
)
from otmageom.ma_structure import MAStructure, MetricAtPoint

__version__ = "0.1.0"

__all__ = [
    "AltForm",
    "ConfigError",
    "CostFunction",
    "DegenerateStructureError",
    "Density",
    "DomainError",
    "GraphSection",
    "MAStructure",
    "MapRecoveryError",
    "MetricAtPoint",
    "ScalarField",
    "gradient",
    "hessian",
    "interior_product",
    "mixed_hessian",
    "pullback_by_section",
    "wedge",
]
