"""Exception types shared across the package.

`NumericalAbort` subclasses map to CLI exit code 3; `ConfigError` maps to
exit code 2. Everything else is a plain library error.
"""


class HkflowError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(HkflowError):
    """Invalid experiment/scenario configuration (CLI exit code 2)."""


class NumericalAbort(HkflowError):
    """An integration or analysis run aborted for numerical reasons (CLI exit code 3)."""


class NonUniqueContinuation(NumericalAbort):
    """The initial condition sits on a repulsive switching surface; the
    continuation is not unique and no branch override was supplied."""


class SwitchCapExceeded(NumericalAbort):
    """The integrator processed more switching events than `max_switches`."""


class StepSizeUnderflow(NumericalAbort):
    """The integrator cannot advance time (step shrank below resolution)."""


class NoRootError(HkflowError):
    """`locate_event` was called on a segment with no surface crossing."""


class NoTangentCombination(HkflowError):
    """Both one-sided normal derivatives coincide; no convex combination is
    transversally determined (degenerate, tangential geometry)."""


class HeterogeneousKernels(HkflowError):
    """An operation requiring one shared kernel was given per-pair kernels."""


class InitialOnSurface(HkflowError):
    """A zero-agent trajectory was started on a switching sphere."""


class BranchExplosion(NumericalAbort):
    """Non-unique continuations multiplied beyond the branch cap."""


class AmbiguousPairLimit(HkflowError):
    """Too many pairs sit on their switching surfaces at once; enumerating
    2^m interaction graphs would blow up."""


class MissingVerdicts(HkflowError):
    """Summary statistics requested from run records that carry no verdicts."""
