"""Exception types shared across the toolkit."""


class TaskprintError(Exception):
    """Base class for all taskprint errors."""


class ValidationError(TaskprintError, ValueError):
    """Input violates a documented precondition or invariant."""


class IncompatibleFingerprintError(ValidationError):
    """Two fingerprints cannot be compared; names the mismatched field."""

    def __init__(self, field, detail=""):
        self.field = field
        msg = f"incompatible fingerprints: {field} mismatch"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class FormatError(TaskprintError, ValueError):
    """A serialized artifact does not match its declared format."""


class MissingRecordError(TaskprintError, KeyError):
    """An outcome record required by a meta metric is absent."""

    def __str__(self):  # KeyError quotes its payload; keep the message readable
        return self.args[0] if self.args else ""


class UnknownMeasureError(TaskprintError, KeyError):
    """Requested distance measure is not registered."""

    def __init__(self, name, registered):
        self.name = name
        self.registered = sorted(registered)
        super().__init__(f"unknown measure {name!r}; registered: {', '.join(self.registered)}")

    def __str__(self):
        return self.args[0]


class EmptyPoolError(TaskprintError, ValueError):
    """No candidates remain after exclusions and compatibility filtering."""


class DuplicateTaskError(TaskprintError, ValueError):
    """A task with this id is already stored and overwrite was not requested."""
