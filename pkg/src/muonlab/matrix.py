"""Dense matrix primitives shared by every muonlab module.

A Matrix is a read-only 2-D float64 ``numpy.ndarray`` with finite entries.
``as_matrix`` is the single gate into that representation; every operation
here returns a fresh read-only array so callers can treat matrices as values.

The SVD is a one-sided (Hestenes) Jacobi SVD. It is slower than LAPACK but
its stopping rule is explicit, which is what the verification oracles built
on top of it need.
"""

import math
from os import PathLike
from typing import NamedTuple, TypeAlias

import numpy as np
import numpy.typing as npt

from muonlab.errors import (
    DimensionLimitError,
    MatrixError,
    NonFiniteError,
    ShapeMismatchError,
    SvdConvergenceError,
)

Matrix: TypeAlias = npt.NDArray[np.float64]

MAX_SVD_DIM = 4096
SWEEP_FACTOR = 100  # sweep cap = SWEEP_FACTOR * max(rows, cols)
OFF_DIAGONAL_TOL = 1e-14


def freeze(a: np.ndarray) -> Matrix:
    """Mark ``a`` read-only and return it (no copy)."""
    a.flags.writeable = False
    return a


def as_matrix(data: npt.ArrayLike, *, where: str = "matrix") -> Matrix:
    """Validate ``data`` as a finite 2-D real matrix and return a read-only copy."""
    try:
        arr = np.array(data, dtype=np.float64, copy=True)
    except (TypeError, ValueError) as exc:
        raise MatrixError(f"{where}: not a real matrix ({exc})", where=where) from exc
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise MatrixError(
            f"{where}: expected a non-empty 2-D matrix, got shape {arr.shape}",
            where=where,
            shape=list(arr.shape),
        )
    if not np.isfinite(arr).all():
        raise NonFiniteError(where)
    return freeze(arr)


def zeros(rows: int, cols: int) -> Matrix:
    return freeze(np.zeros((rows, cols)))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return freeze(np.matmul(a, b))


def frobenius_norm(a: Matrix) -> float:
    """√(Σ aᵢⱼ²), computed on the max-abs-scaled matrix to avoid overflow."""
    peak = float(np.max(np.abs(a)))
    if peak == 0.0:
        return 0.0
    return peak * math.sqrt(float(np.sum(np.square(a / peak))))


def rms(a: Matrix) -> float:
    rows, cols = a.shape
    return frobenius_norm(a) / math.sqrt(rows * cols)


def random_orthogonal(n: int, rng: np.random.Generator) -> Matrix:
    """Haar-distributed orthogonal n×n matrix from the QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return freeze(q * signs)


# --- SVD ---------------------------------------------------------------------


class SvdResult(NamedTuple):
    """Thin SVD with r = min(rows, cols): ``u`` is rows×r, ``vt`` is r×cols."""

    u: Matrix
    sigma: npt.NDArray[np.float64]
    vt: Matrix

    def reconstruct(self) -> Matrix:
        return freeze((self.u * self.sigma) @ self.vt)


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi on a rows ≥ cols matrix.

    Columns of ``a`` are stored as rows of ``work`` so each rotation touches
    contiguous memory. The same rotations accumulate into ``vt``.
    """
    m, n = a.shape
    # Always a private copy: the caller's matrix is never rotated.
    work = np.array(a.T, dtype=np.float64, order="C", copy=True)
    # Unit max entry keeps the squared column norms clear of underflow.
    scale = float(np.max(np.abs(work), initial=0.0)) or 1.0
    work /= scale
    vt = np.eye(n)
    cap = SWEEP_FACTOR * max(m, n)

    for _sweep in range(cap):
        worst = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                xp = work[p]
                xq = work[q]
                alpha = float(xp @ xp)
                beta = float(xq @ xq)
                if alpha == 0.0 or beta == 0.0:
                    continue
                gamma = float(xp @ xq)
                cosine = abs(gamma) / math.sqrt(alpha * beta)
                if cosine <= OFF_DIAGONAL_TOL:
                    continue
                worst = max(worst, cosine)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.hypot(1.0, t)
                s = c * t

                old_p = xp.copy()
                work[p] = c * old_p - s * xq
                work[q] = s * old_p + c * xq

                old_vp = vt[p].copy()
                vt[p] = c * old_vp - s * vt[q]
                vt[q] = s * old_vp + c * vt[q]
        if worst == 0.0:
            break
    else:
        raise SvdConvergenceError(cap, worst)

    sigma = np.sqrt(np.einsum("ij,ij->i", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[order]
    vt = vt[order]

    # Columns at rounding level relative to the largest carry no direction.
    floor = max(sigma[0] * max(m, n) * np.finfo(np.float64).eps, np.finfo(np.float64).tiny)
    live = sigma > floor
    u = np.zeros((m, n))
    u[:, live] = (work[live] / sigma[live, None]).T
    sigma[~live] = 0.0
    sigma *= scale
    if not live.all():
        # Complete u with an orthonormal basis of the complement of its live columns.
        k = int(live.sum())
        q, _ = np.linalg.qr(np.hstack([u[:, :k], np.eye(m)]))
        u[:, k:] = q[:, k:n]
    return u, sigma, vt


def svd(a: Matrix) -> SvdResult:
    rows, cols = a.shape
    if max(rows, cols) > MAX_SVD_DIM:
        raise DimensionLimitError(a.shape, MAX_SVD_DIM)
    if not np.isfinite(a).all():
        raise NonFiniteError("svd input")

    if rows >= cols:
        u, sigma, vt = _jacobi_tall(np.asarray(a))
    else:
        u_t, sigma, vt_t = _jacobi_tall(np.asarray(a).T)
        u, vt = vt_t.T.copy(), u_t.T.copy()
    return SvdResult(freeze(u), freeze(sigma), freeze(vt))


def singular_values(a: Matrix) -> npt.NDArray[np.float64]:
    return svd(a).sigma


# --- CSV interchange -----------------------------------------------------------
#
# One matrix row per line, comma-separated decimal literals, no header.


def read_matrix_csv(path: str | PathLike[str]) -> Matrix:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise MatrixError(f"cannot read matrix CSV {path}: {exc}", path=str(path)) from exc
    return as_matrix(data, where=str(path))


def format_decimal(value: float, precision: int = 17) -> str:
    return format(float(value), f".{precision}g")


def write_matrix_csv(path: str | PathLike[str], a: Matrix, precision: int = 17) -> None:
    np.savetxt(path, a, delimiter=",", fmt=f"%.{precision}g")
