"""Exception types shared across the toolkit."""


class DietSwitchError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DietSwitchError):
    """Invalid parameters, configuration, or input data."""


class ParseError(DietSwitchError):
    """Malformed configuration file."""

    def __init__(self, message, path=None, key=None):
        ctx = []
        if path is not None:
            ctx.append(f"file {path}")
        if key is not None:
            ctx.append(f"key {key!r}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.path = path
        self.key = key


class DomainError(DietSwitchError):
    """A rate function was evaluated outside its admissible domain."""


class DiscontinuityError(DietSwitchError):
    """A derivative was requested at a jump of a step-form rate."""


class NonBracketing(DietSwitchError):
    """Root solver endpoints do not bracket a sign change."""


class NoConvergence(DietSwitchError):
    """Iterative solver hit its iteration cap."""


class EmptyResult(DietSwitchError):
    """A scan that must return at least one item found none."""


class InvalidEquilibrium(DietSwitchError):
    """Operation applied to an equilibrium of the wrong kind."""


class MatchingError(DietSwitchError):
    """Eigenvalue pairing between two spectra is ambiguous."""


class DegenerateInput(DietSwitchError):
    """Input at a degenerate point where the requested quantity is undefined."""


class StepSizeUnderflow(DietSwitchError):
    """Adaptive integrator drove the step size below its floor."""


class NegativeStateBeyondTolerance(DietSwitchError):
    """A state component went negative past the clipping tolerance."""


class InsufficientSnapshots(DietSwitchError):
    """A trajectory does not carry enough snapshots for the diagnostic."""
