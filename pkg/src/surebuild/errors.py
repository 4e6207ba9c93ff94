"""Exception types shared across the build engine."""


class BuildError(Exception):
    """Base class for all engine errors."""


class WriteIntoCollectionListing(BuildError):
    """A write targeted a collection listing; writes must name concrete resources."""


class OverlappingContraction(BuildError):
    """A contraction overlaps an existing contraction or a collection."""


class UnboundVariable(BuildError):
    """A script used a variable before any read bound it."""


class NonTermination(BuildError):
    """A script exceeded its instruction budget."""


class CycleDetected(BuildError):
    """The dependency graph contains a cycle."""


class SerialOrderViolation(BuildError):
    """An edge points backwards relative to the declared serial order."""


class MissingTrace(BuildError):
    """A task has no recorded trace where one is required."""


class TaskFailed(BuildError):
    """A task body raised during execution."""

    def __init__(self, task, cause):
        super().__init__(f"task {task!r} failed: {cause}")
        self.task = task
        self.cause = cause


class InfeasibleChoice(BuildError):
    """An interleaving choice violates program order or a graph constraint."""


class LivelockGuard(BuildError):
    """A transactional run exceeded its restart budget."""


class LimitExceeded(BuildError):
    """An enumeration went past its configured limits."""


class NonContiguousPartition(BuildError):
    """A task partition would produce a cyclic or order-violating quotient graph."""


class IncrementalIneligible(BuildError):
    """The configuration violates the no-effect assumption required for incremental mode."""


class DescriptionError(BuildError):
    """A build description or data file failed to parse or validate."""

    def __init__(self, message, where=None):
        if where:
            message = f"{where}: {message}"
        super().__init__(message)
        self.where = where
