"""Exception types shared across the package."""


class IfrError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IfrError):
    """Inputs have mismatched variants, shapes, or dimensions."""


class InvalidInputError(IfrError):
    """Input contains non-finite entries or violates a basic precondition."""


class InvalidWeightsError(IfrError):
    """Weights do not sum to one within tolerance."""


class DegenerateMeanError(IfrError):
    """A Fréchet mean solve degenerated (e.g. near-zero sphere average)."""


class DegenerateInputError(IfrError):
    """A projection received an input with no feasible image (e.g. zero vector)."""


class InsufficientLocalDataError(IfrError):
    """Too little kernel mass near the target to form local linear weights."""

    def __init__(self, t: float, bandwidth: float):
        self.t = float(t)
        self.bandwidth = float(bandwidth)
        super().__init__(
            f"local linear weights undefined at t={t!r} with bandwidth {bandwidth!r}"
        )


class NoFeasibleBandwidthError(IfrError):
    """Every candidate bandwidth failed cross-validation."""


class NoFeasibleBinsError(IfrError):
    """Every candidate bin count failed cross-validation."""


class DegenerateProjectionError(IfrError):
    """All index projections coincide; binning is impossible."""


class OutOfBallError(IfrError):
    """A reduced direction lies outside the open unit ball."""


class FitFailureError(IfrError):
    """No candidate direction produced a finite criterion value."""


class StepError(IfrError):
    """A finite-difference step would leave the reduced parameter space."""


class SingularHessianError(IfrError):
    """The finite-difference Hessian is numerically singular."""


class SingularDesignError(IfrError):
    """The predictor sample covariance is numerically singular."""


class RankError(IfrError):
    """A hypothesis matrix is rank deficient."""


class DegenerateRegionError(IfrError):
    """A confidence-region shape matrix is not positive definite."""


class CovarianceError(IfrError):
    """A requested covariance structure is not a valid covariance matrix."""


class BootstrapFailureError(IfrError):
    """Too many bootstrap replicates failed to produce an estimate."""

    def __init__(self, n_failed: int, n_total: int):
        self.n_failed = int(n_failed)
        self.n_total = int(n_total)
        super().__init__(
            f"{n_failed} of {n_total} bootstrap replicates failed"
        )


class ParseError(IfrError):
    """A dataset or configuration file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class ExtrapolationWarning(UserWarning):
    """A prediction point lies outside the bandwidth-padded training range."""
