"""Independent per-predictor p-values from sparse correlated designs, and the Rényi outlier test."""

from ._accel import backend, using_backend
from .design import (
    UNASSIGNED,
    DesignError,
    DesignParseError,
    DisconnectedPredictorError,
    Layer,
    Partitioning,
    SparseDesign,
    load_design,
    load_partitioning,
    save_design,
    save_partitioning,
    validate_partitioning,
    variance_fractions,
)
from .distill import DistillResult, InvalidLayerError, distill, distill_iteration
from .filters import FilterError, FilterSpec, apply_filter, compose, decompose
from .harness import Scenario, emit_results, generate_scenario, parse_config, run_power
from .partition import PartitionConfig, g_approx, g_mc_oracle, greedy_partition, omega_thresholds
from .power import check_inequalities, lambda_k, power_bound_schedule, power_lower_bound
from .residualize import CovariateBasis, prepare_response, rank_normalize, residualize_covariates
from .rng import GaussianField
from .rtest import (
    LRTWhitener,
    NullTable,
    NullTableError,
    baseline_cauchy,
    baseline_chisq,
    baseline_minp,
    build_null_table,
    load_table,
    renyi_pvalue,
    renyi_stat,
    renyi_test,
    renyi_transform,
    schedule,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
