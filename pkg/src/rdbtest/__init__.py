"""Robust differential abundance (RDB) testing for compositional count data."""

from .balance import BalanceWeights, balance_groups, calibration_weights, rdb_weighted, weighted_stats
from .continuous import ContinuousDesign, correlation_stats, rdb_continuous
from .core import (
    Direction,
    Mode,
    RdbConfig,
    TestOutcome,
    Thresholds,
    decide_direction,
    default_thresholds,
    median_mid,
    rdb_iterate,
    rdb_oracle_noiseless,
    renormalized_stats,
    select_rejections,
)
from .data import (
    CompositionMatrix,
    CountMatrix,
    SampleMetadata,
    TwoSampleDesign,
    load_counts,
    load_metadata,
    split_groups,
    to_proportions,
)
from .error_control import TailLaw, bh_adjust, bonferroni, fdr_threshold, survival
from .exceptions import ConvergenceError, DataFormatError, DegenerateDesignError, RdbError

__version__ = "0.1.0"
