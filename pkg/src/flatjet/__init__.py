"""Whitney extension of flat nonnegative jet data, flat norms and finiteness scans."""

from .calculus import (
    Box,
    CallableOracle,
    JetOracle,
    PolynomialOracle,
    PowerOracle,
    ProductOracle,
    ScaledOracle,
    TensorBumpOracle,
    ZeroOracle,
    bump_g,
    faa_di_bruno,
    phi0,
    plateau_bump,
    power_jet,
    scaled_bump,
)
from .estimator import WhitneyExtender
from .exceptions import DataError, FlatJetError, NotFlatError, NumericalError
from .finiteness import (
    ConvexityWitness,
    FinitenessReport,
    ShapeFieldSpec,
    finiteness_scan,
    fuzz_whitney_convexity,
    gamma_f_member,
    surrogate_local_norm,
)
from .jets import Jet, Smoothness, WhitneyField, jet_eval, jet_multiply, jet_recenter
from .norms import (
    GammaSpec,
    NormReport,
    flat_lengthscale,
    gamma_member,
    sampled_norms,
    whitney_field_cs_norm,
    whitney_field_flat_norm,
    whitney_field_norm,
)
from .whitney import (
    Extension,
    WhitneyDecomposition,
    build_pou,
    extension_jet,
    single_jet_extend,
    whitney_decompose,
    whitney_extend,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "CallableOracle",
    "ConvexityWitness",
    "DataError",
    "Extension",
    "FinitenessReport",
    "FlatJetError",
    "GammaSpec",
    "Jet",
    "JetOracle",
    "NormReport",
    "NotFlatError",
    "NumericalError",
    "PolynomialOracle",
    "PowerOracle",
    "ProductOracle",
    "ScaledOracle",
    "ShapeFieldSpec",
    "Smoothness",
    "TensorBumpOracle",
    "WhitneyDecomposition",
    "WhitneyExtender",
    "WhitneyField",
    "ZeroOracle",
    "build_pou",
    "bump_g",
    "extension_jet",
    "faa_di_bruno",
    "finiteness_scan",
    "flat_lengthscale",
    "fuzz_whitney_convexity",
    "gamma_f_member",
    "gamma_member",
    "jet_eval",
    "jet_multiply",
    "jet_recenter",
    "phi0",
    "plateau_bump",
    "power_jet",
    "sampled_norms",
    "scaled_bump",
    "single_jet_extend",
    "surrogate_local_norm",
    "whitney_decompose",
    "whitney_extend",
    "whitney_field_cs_norm",
    "whitney_field_flat_norm",
    "whitney_field_norm",
]
