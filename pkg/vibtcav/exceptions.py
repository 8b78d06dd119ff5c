import os
from typing import Iterable, Union


class VibTcavException(Exception):  # noqa: N818
    pass


class DomainError(VibTcavException):
    pass


class ConfigurationError(VibTcavException):
    pass


class TrainingError(VibTcavException):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"Training diverged in epoch {epoch}: loss is {loss}")
        self.epoch = epoch
        self.loss = loss


class FormatError(VibTcavException):
    def __init__(self, path: Union[str, os.PathLike], offset: int, reason: str):
        super().__init__(f"Malformed file {path} at byte offset {offset}: {reason}")
        self.path = path
        self.offset = offset


class SchemaVersionError(VibTcavException):
    def __init__(self, versions: Iterable[object]):
        found = ", ".join(sorted(str(v) for v in set(versions)))
        super().__init__(f"Refusing to mix documents with schema versions: {found}")
