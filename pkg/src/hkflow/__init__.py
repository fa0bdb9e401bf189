"""hkflow: simulator and analysis toolkit for bounded-confidence opinion
dynamics with switching (Filippov) right-hand sides."""

from .model import (
    InteractionGraph,
    KernelFamily,
    KernelMatrix,
    KernelSpec,
    MonitorSample,
    SystemState,
    active_graph_set,
    eval_kernel,
    graph_field,
    monitors,
    pairwise_distances,
    vector_field,
)
from .integrator import (
    EventKind,
    EventRecord,
    IntegratorConfig,
    Termination,
    Trajectory,
    classify_crossing,
    integrate,
    locate_event,
    sliding_field,
    tangent_combination,
)
from .equilibrium import (
    ClusterSet,
    EquilibriumClass,
    EquilibriumVerdict,
    Partition,
    classify_state,
    lyapunov_value,
    merge_clusters,
    partitions_separated,
)
from .robustness import (
    ClusteredEquilibrium,
    DeltaSweep,
    NecessaryVerdict,
    RobustnessReport,
    SufficientVerdict,
    TrajectoryKind,
    TrajectoryType,
    ZeroAgentScenario,
    center_of_mass,
    classify_zero_trajectory,
    delta_sweep,
    genericity_check,
    measure_delta,
    radius_intersections,
    robustness_report,
    scmc_check,
    sqrt2_hypothesis,
    theorem_verdicts,
    triple_ball_check,
    zero_agent_reduced_field,
)
from .harness import (
    AnalysisFlags,
    ExperimentSpec,
    RunRecord,
    SummaryStats,
    WeightScheme,
    export,
    run_experiment,
    sample_initial,
    table1_stats,
)

__version__ = "0.1.0"
