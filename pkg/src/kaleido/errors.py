"""Exception types shared across the package."""


class KaleidoError(Exception):
    pass


class DimensionError(KaleidoError, ValueError):
    """Sizes that are not powers of two, or that do not agree."""


class GrammarError(KaleidoError, ValueError):
    """A factor chain that does not parse as (B B*)^w.

    `index` is the position of the first offending stage.
    """

    def __init__(self, index, message):
        self.index = index
        super().__init__(f"stage {index}: {message}")


class ParseError(KaleidoError, ValueError):
    def __init__(self, location, message):
        self.location = location
        super().__init__(f"{location}: {message}")


class SingularFactor(KaleidoError, ValueError):
    def __init__(self, stage, block, det):
        self.stage = stage
        self.block = block
        self.det = det
        super().__init__(f"singular 2x2 block at stage {stage}, block {block} (|det|={abs(det):.3g})")


class StepConditionError(KaleidoError, ValueError):
    def __init__(self, cols, message):
        self.cols = cols
        super().__init__(f"columns {cols}: {message}")


class NotOrthogonal(KaleidoError, ValueError):
    pass


class ConvergenceError(KaleidoError, RuntimeError):
    pass
