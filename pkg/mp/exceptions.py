"""Error types raised by the engine. Commands turn them into CommandError."""


class MagicPyramidError(Exception):
    pass


class ShapeError(MagicPyramidError):
    pass


class NumericError(MagicPyramidError):
    pass


class InputError(MagicPyramidError):
    pass


class ConfigError(MagicPyramidError):
    pass


class LoadError(MagicPyramidError):
    pass


class StageError(MagicPyramidError):
    """A training stage aborted; carries where it happened."""

    def __init__(self, stage, epoch, message):
        super().__init__(f"stage {stage!r}, epoch {epoch}: {message}")
        self.stage = stage
        self.epoch = epoch
