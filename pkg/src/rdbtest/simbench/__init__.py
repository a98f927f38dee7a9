from .bench import (
    ALL_METHODS,
    RDB,
    RDB_CAL,
    MethodSummary,
    PerformanceReport,
    ReplicateScore,
    run_replicate,
    run_scenario,
    score,
)
from .generators import (
    GroundTruth,
    ReplicateStreams,
    Scenario,
    ScenarioKind,
    SimulatedData,
    ar1_normals,
    gen_effect_sizes,
    gen_lognormal,
    gen_lognormal_cov,
    gen_poisson_gamma,
    gen_poisson_gamma_continuous,
    gen_shuffle,
    generate,
)
