"""surebuild: a reliable incremental, parallel build engine over simulated state.

The engine models builds as deterministic tasks reading and writing named
resources. It checks builds for validity (every conflicting task pair must be
ordered by the dependency graph), infers missing edges offline, executes
builds under plain, locking, and multiversion-timestamp transactional
executors, computes incremental frontiers from content digests, coarsens
tasks and resources, and ships a brute-force oracle that enumerates every
interleaving of small configurations.
"""

from .errors import (
    BuildError,
    CycleDetected,
    DescriptionError,
    IncrementalIneligible,
    InfeasibleChoice,
    LimitExceeded,
    LivelockGuard,
    MissingTrace,
    NonContiguousPartition,
    NonTermination,
    OverlappingContraction,
    SerialOrderViolation,
    TaskFailed,
    UnboundVariable,
    WriteIntoCollectionListing,
)
from .executor import (
    BuildTrace,
    MutableStore,
    durations_from_trace,
    random_interleaving,
    run_interleaved,
    run_parallel,
    run_sequential,
    run_with_policy,
    trace_lines,
)
from .graph import (
    Configuration,
    DependencyGraph,
    Schedule,
    ValidityReport,
    check_validity,
    critical_path_lengths,
    incremental_frontier,
    list_schedule,
    priority_schedule,
    serial_schedule,
    verify_schedule,
)
from .granularity import (
    Proposal,
    UsageStats,
    aggregate_system,
    collapse_owned,
    merge_tasks,
    suggest_partitions,
    usage_stats,
)
from .inference import (
    InferredEdge,
    ResourceDigestDb,
    diff,
    infer_edges,
    infer_until_valid,
    make_snapshot,
    no_effect_offenders,
    prune_inferred,
    run_incremental,
    snapshot,
)
from .oracle import (
    EnumerationResult,
    TheoremResult,
    enumerate_builds,
    optimal_makespan,
    theorem_check,
)
from .resources import (
    ABSENT,
    AccessEvent,
    Bytes,
    CollectionSpec,
    PrefixSet,
    ResourceSpace,
    SharedState,
    TupleValue,
    conflicts,
    contract,
    contract_state,
    expand_state,
    value_digest,
)
from .scripts import (
    Branch,
    Concat,
    Halt,
    Lit,
    Proj,
    ReadInto,
    ScriptRunner,
    TaskScript,
    TaskTrace,
    TupleExpr,
    Var,
    WriteFrom,
    replay_check,
    run_task,
)
from .txn import (
    AbortRecord,
    TxnOutcome,
    VersionedStore,
    abort_log_lines,
    fixed_policy,
    predicted_sets,
    random_policy,
    round_robin,
    run_locking,
    run_mvto,
)

__version__ = "0.1.0"
