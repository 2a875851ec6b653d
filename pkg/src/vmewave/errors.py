"""Exception types shared across the solver stack."""


class VmeError(Exception):
    """Base class for everything this package raises on purpose."""


class NonPositiveStretch(VmeError):
    """The deformation gradient dropped to F <= 0 somewhere.

    The Neo-Hookean energy is undefined there, so this is always a hard
    error. Values are never clamped.
    """

    def __init__(self, f_min, where=""):
        self.f_min = f_min
        self.where = where
        msg = f"non-positive stretch encountered (min F = {f_min:.6g})"
        if where:
            msg += f" in {where}"
        super().__init__(msg)

    def __reduce__(self):
        return (self.__class__, (self.f_min, self.where))


class InvalidDiscretization(VmeError):
    """Mesh counts violate their constraints (positivity, divisibility)."""


class PointOutsideCoarseElement(VmeError):
    """Two-scale map produced a parent coordinate outside [-1, 1]."""


class InvalidSubstepRatio(VmeError):
    """Sub-step ratio p must lie strictly inside (0, 1)."""


class NonConformingPhase(VmeError):
    """Phase boundary does not coincide with a fine element boundary."""


class SplitNonConvergence(VmeError):
    """Operator-split fixed point failed to converge within the iteration cap."""

    def __init__(self, step, worst_subdomain, iters):
        self.step = step
        self.worst_subdomain = worst_subdomain
        self.iters = iters
        super().__init__(
            f"operator split did not converge after {iters} iterations at step "
            f"{step} (worst subdomain {worst_subdomain})"
        )

    def __reduce__(self):
        return (self.__class__, (self.step, self.worst_subdomain, self.iters))


class NewtonNonConvergence(VmeError):
    """Newton loop on a fine-scale subdomain exceeded its iteration cap."""

    def __init__(self, step, worst_subdomain, iters, residual):
        self.step = step
        self.worst_subdomain = worst_subdomain
        self.iters = iters
        self.residual = residual
        super().__init__(
            f"Newton did not converge after {iters} iterations at step {step} "
            f"(worst subdomain {worst_subdomain}, residual {residual:.3e})"
        )

    def __reduce__(self):
        return (self.__class__,
                (self.step, self.worst_subdomain, self.iters, self.residual))


class SingularTangent(VmeError):
    """Direct factorization of a fine-scale system matrix failed."""


class DtFloorError(VmeError):
    """Stable time increment fell below the hard floor (runaway compression)."""

    def __init__(self, dt, floor):
        self.dt = dt
        self.floor = floor
        super().__init__(f"stable dt {dt:.3e} fell below the floor {floor:.1e}")

    def __reduce__(self):
        return (self.__class__, (self.dt, self.floor))


class MissingSnapshot(VmeError):
    """No recorded snapshot close enough to the requested time."""


class ZeroReference(VmeError):
    """Reference field is identically zero; relative error undefined."""


class ParseError(VmeError):
    """Configuration file could not be read or a field failed to convert."""


class ValidationError(VmeError):
    """One or more configuration values are out of range.

    Collects every violation so a bad file is reported in full, not one
    complaint at a time.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))

    def __reduce__(self):
        return (self.__class__, (self.problems,))
