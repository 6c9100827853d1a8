"""Exception hierarchy shared by every rit module."""

from __future__ import annotations


class RitError(Exception):
    """Base class; the CLI turns any of these into exit status 1."""


class ContractError(RitError):
    """A documented precondition was violated."""


class DimensionError(ContractError):
    """Operand shapes do not line up."""


class NonFiniteError(ContractError):
    """A checked tensor received NaN or Inf entries."""


class PoseError(ContractError):
    """A 4x4 pose is not a valid homogeneous rigid transform."""


class FormatError(RitError):
    """A data file could not be parsed. The message names file and line."""

    def __init__(self, path, line: int | None, reason: str) -> None:
        self.path = str(path)
        self.line = line
        self.reason = reason
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {reason}")


class MissingFramesError(RitError):
    """Prediction and ground-truth directories cover different frames."""

    def __init__(self, missing_pred: list[str], missing_gt: list[str]) -> None:
        self.missing_pred = sorted(missing_pred)
        self.missing_gt = sorted(missing_gt)
        parts = []
        if self.missing_pred:
            parts.append("no prediction for: " + ", ".join(self.missing_pred))
        if self.missing_gt:
            parts.append("no ground truth for: " + ", ".join(self.missing_gt))
        super().__init__("; ".join(parts))


class TrainingError(RitError):
    """Training produced a non-finite loss."""


class WeightFileError(RitError):
    """A weight container is truncated, malformed or incompatible."""
