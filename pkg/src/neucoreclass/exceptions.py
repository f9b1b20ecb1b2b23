"""Exception hierarchy shared by the library and the CLI."""


class NCRCError(Exception):
    """Base class for all errors raised by :mod:`neucoreclass`."""


class DataError(NCRCError, ValueError):
    pass


class UnequalLength(DataError):
    pass


class MissingValues(DataError):
    pass


class UnknownFormat(DataError):
    pass


class ClassMissingFromSplit(DataError):
    pass


class SingleClassDataset(DataError):
    pass


class TooFewSamples(DataError):
    pass


class InvalidConfig(NCRCError, ValueError):
    pass


class ShapeMismatch(NCRCError, ValueError):
    pass


class NonPositiveTemperature(NCRCError, ValueError):
    pass


class InvalidDistribution(NCRCError, ValueError):
    pass


class UntrainedModel(NCRCError, RuntimeError):
    pass


class EmptyTrainingSet(NCRCError, ValueError):
    pass


class EmptySet(NCRCError, ValueError):
    pass


class NonFiniteLoss(NCRCError, FloatingPointError):
    """Raised when a task loss becomes NaN or infinite during training."""

    def __init__(self, task, epoch, step, value):
        self.task = task
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(
            f"non-finite {task} loss ({value}) at epoch {epoch}, step {step}"
        )


class SingleClass(NCRCError, ValueError):
    pass


class NoPositives(NCRCError, ValueError):
    pass


class UnevenSeeds(NCRCError, ValueError):
    pass


class MissingProblem(NCRCError, ValueError):
    pass


class CheckpointError(NCRCError, ValueError):
    pass
