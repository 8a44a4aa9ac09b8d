"""Expected value of sample information by moment matching.

The package estimates the EVSI of a proposed study from a probabilistic
sensitivity analysis (PSA) and a small number of posterior updates.  It
also provides a nested Monte Carlo reference, an exact oracle for a toy
model and a harness that sweeps the number of nested datasets ``Q``.
"""

from .core import (
    EvsiEstimate,
    FocalSubset,
    FutureDataset,
    ParameterVector,
    PsaResult,
    VarianceBundle,
    derive_seed,
    derive_stream,
    ordered_mean,
    ordered_sum,
)
from .evppi import AdditiveSplineRegressor, ConditionalInb, RegressionConfig, evppi, fit_conditional_inb
from .harness import OracleSpec, SweepConfig, run_sweep, summarize_sweep
from .mm import MmConfig, MomentMatchingEVSI, evsi_moment_matching
from .oracle import evsi_nested_mc, toy_evppi_analytic, toy_evsi_analytic
from .psa import EconomicModel, inb_moments, load_psa_csv, save_psa_csv, simulate_psa

__version__ = "0.1.0"

__all__ = [
    "EvsiEstimate",
    "FocalSubset",
    "FutureDataset",
    "ParameterVector",
    "PsaResult",
    "VarianceBundle",
    "derive_seed",
    "derive_stream",
    "ordered_mean",
    "ordered_sum",
    "AdditiveSplineRegressor",
    "ConditionalInb",
    "RegressionConfig",
    "evppi",
    "fit_conditional_inb",
    "OracleSpec",
    "SweepConfig",
    "run_sweep",
    "summarize_sweep",
    "MmConfig",
    "MomentMatchingEVSI",
    "evsi_moment_matching",
    "evsi_nested_mc",
    "toy_evppi_analytic",
    "toy_evsi_analytic",
    "EconomicModel",
    "inb_moments",
    "load_psa_csv",
    "save_psa_csv",
    "simulate_psa",
]
