"""Structured errors for muonlab.

Every error carries a ``details`` mapping next to its message so the CLI can
report failures as JSON without parsing strings.
"""

from typing import Any


class MuonLabError(Exception):
    """Base class for all muonlab errors."""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, **self.details}


class MatrixError(MuonLabError):
    """Input that cannot be read as a 2-D real matrix."""


class ShapeMismatchError(MuonLabError):
    def __init__(self, operation: str, left: tuple[int, ...], right: tuple[int, ...]):
        super().__init__(
            f"{operation}: incompatible shapes {left} and {right}",
            operation=operation,
            left=list(left),
            right=list(right),
        )


class NonFiniteError(MuonLabError):
    def __init__(self, where: str):
        super().__init__(f"{where}: non-finite entries", where=where)


class DimensionLimitError(MuonLabError):
    def __init__(self, shape: tuple[int, ...], limit: int):
        super().__init__(
            f"shape {shape} exceeds the supported limit of {limit} per side",
            shape=list(shape),
            limit=limit,
        )


class SvdConvergenceError(MuonLabError):
    def __init__(self, sweeps: int, off_diagonal: float):
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps "
            f"(largest off-diagonal cosine {off_diagonal:.3e})",
            sweeps=sweeps,
            off_diagonal=off_diagonal,
        )


class NumericalOverflowError(MuonLabError):
    def __init__(self, step: int):
        super().__init__(f"Newton-Schulz produced non-finite values at step {step}", step=step)


class ParamKindError(MuonLabError):
    def __init__(self, name: str, kind: str, optimizer: str):
        super().__init__(
            f"{optimizer} cannot update parameter {name!r} of kind {kind}",
            param=name,
            kind=kind,
            optimizer=optimizer,
        )


class MissingGradientError(MuonLabError):
    def __init__(self, name: str):
        super().__init__(f"no gradient supplied for parameter {name!r}", param=name)


class MissingShardError(MuonLabError):
    def __init__(self, name: str, rank: int):
        super().__init__(
            f"rank {rank} did not contribute a shard of {name!r}", param=name, rank=rank
        )


class EmptyLedgerError(MuonLabError):
    def __init__(self, which: str):
        super().__init__(f"{which} world has not communicated any bytes yet", world=which)


class EntropyUndefinedError(MuonLabError):
    def __init__(self):
        super().__init__("SVD entropy is undefined when every singular value is zero")


class FitError(MuonLabError):
    pass


class DivergenceError(MuonLabError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss!r})", step=step, loss=loss)


class ConfigError(MuonLabError):
    pass
