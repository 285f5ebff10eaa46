"""Exception types shared across the package."""


class SoftCtrlError(Exception):
    """Base class for every error raised by softctrl."""


class DegenerateTarget(SoftCtrlError):
    """The inverse dynamics sign rule is ambiguous for this target."""


class ParseError(SoftCtrlError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class InvariantViolation(SoftCtrlError):
    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"invariant violated: {invariant}" + (f" ({detail})" if detail else ""))


class OutOfRange(SoftCtrlError):
    pass


class SteppedAfterDone(SoftCtrlError):
    pass


class DimensionMismatch(SoftCtrlError):
    pass


class NoForwardPass(SoftCtrlError):
    pass


class LengthMismatch(SoftCtrlError):
    pass


class ConfigError(SoftCtrlError):
    pass
