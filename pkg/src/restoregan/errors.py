"""Exception hierarchy shared across the package."""


class StructuralError(ValueError):
    """Shapes, lengths or configuration values that cannot fit together."""


class NumericDomainError(ArithmeticError):
    """A value lies outside the domain of the requested operation."""


class TrainingDivergence(RuntimeError):
    """A training loss became non-finite."""

    def __init__(self, step, components=None):
        self.step = step
        self.components = dict(components or {})
        detail = ", ".join(f"{k}={v!r}" for k, v in self.components.items())
        super().__init__(f"non-finite loss at step {step}" + (f" ({detail})" if detail else ""))


class ImageIOError(OSError):
    code = 10


class ImageMissingError(ImageIOError):
    code = 11


class ImageNotRGBError(ImageIOError):
    code = 12


class ImageCorruptError(ImageIOError):
    code = 13


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class DuplicateTensorError(CheckpointError):
    pass
