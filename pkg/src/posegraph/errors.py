"""Exception types shared across the package."""


class FormatError(ValueError):
    """A container file is malformed. ``offset`` is the byte position of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class GraphSpecError(ValueError):
    """A declarative graph description does not define a valid part graph."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or references missing inputs."""


class GenerationError(RuntimeError):
    """Synthetic world generation could not satisfy its constraints."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite. ``step`` is the optimisation step that diverged."""

    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss!r})")
        self.step = step
