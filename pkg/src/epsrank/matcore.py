"""Dense matrix core: norms, SVD, truncation errors, rank bounds, file I/O.

Matrices are plain 2-D float64 numpy arrays in row-major order.  Every
public routine validates its input at the boundary; NaN/Inf entries are
rejected there, so downstream code can assume finite data.  All
operations are pure functions of their inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import MatrixFormatError, NumericalError

EPSR_MAGIC = b"EPSR"
EPSR_VERSION = 1

# Header layout: magic(4) + version(1) + rows(8) + cols(8).
_HEADER_LEN = 21
# Refuse absurd headers before allocating anything (2**37 entries = 1 TiB).
_MAX_ENTRIES = 1 << 37


def as_matrix(x) -> np.ndarray:
    """Validate ``x`` and return it as a nonempty 2-D float64 C-order array."""
    a = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"matrix must be nonempty, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite (no NaN/Inf)")
    return a


def max_abs_norm(x) -> float:
    """Largest absolute entry of the matrix."""
    return float(np.abs(as_matrix(x)).max())


def spectral_norm(x) -> float:
    """Largest singular value of the matrix."""
    a = as_matrix(x)
    try:
        return float(np.linalg.svd(a, compute_uv=False)[0])
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular value computation failed: {exc}") from exc


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: ``u @ diag(singular_values) @ vt`` reconstructs the input.

    ``u`` is m x k with orthonormal columns, ``vt`` is k x n with
    orthonormal rows, and the k = min(m, n) singular values are
    nonnegative and nonincreasing.
    """

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray

    @property
    def k(self) -> int:
        return self.singular_values.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.vt.shape[1])


def svd(x) -> SvdResult:
    """Thin singular value decomposition of a dense matrix.

    Raises NumericalError if the underlying iteration does not converge.
    """
    a = as_matrix(x)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return SvdResult(u=u, singular_values=s, vt=vt)


def truncate_svd(s: SvdResult, r: int) -> np.ndarray:
    """Best rank-``r`` approximation ``u[:, :r] @ diag(sigma[:r]) @ vt[:r]``.

    ``r = 0`` returns the zero matrix of the original shape.
    """
    if not 0 <= r <= s.k:
        raise ValueError(f"rank {r} out of range [0, {s.k}]")
    if r == 0:
        return np.zeros(s.shape)
    return (s.u[:, :r] * s.singular_values[:r]) @ s.vt[:r]


def mu_r(x, r: int) -> float:
    """Max-norm error of the rank-``r`` truncated SVD of ``x``."""
    a = as_matrix(x)
    s = svd(a)
    if not 0 <= r <= s.k:
        raise ValueError(f"rank {r} out of range [0, {s.k}]")
    return float(np.abs(a - truncate_svd(s, r)).max())


@dataclass(frozen=True)
class RankBoundResult:
    """Upper bound on the epsilon-rank of a matrix.

    ``rank_upper_bound`` is the smallest r found with
    mu_r(x) <= epsilon; ``mu_curve[r]`` holds mu_r for
    r = 0 .. rank_upper_bound.  This is an upper bound on the true
    epsilon-rank, never an exact value.
    """

    epsilon: float
    rank_upper_bound: int
    mu_curve: np.ndarray


def mu_curve(x) -> np.ndarray:
    """All truncation errors mu_0 .. mu_k, reusing a single SVD.

    The residual is peeled one singular triplet at a time, so the whole
    curve costs one SVD plus O(k m n) updates.  The final value is 0 by
    definition (keeping all k triplets reproduces the matrix).
    """
    a = as_matrix(x)
    s = svd(a)
    k = s.k
    resid = a.copy()
    scratch = np.empty_like(resid)
    curve = np.empty(k + 1)
    for r in range(k + 1):
        if r == k:
            curve[r] = 0.0
            break
        np.abs(resid, out=scratch)
        curve[r] = scratch.max()
        resid -= s.singular_values[r] * np.outer(s.u[:, r], s.vt[r])
    return curve


def rank_eps_upper_bound(x, epsilon: float) -> RankBoundResult:
    """Smallest r with mu_r(x) <= epsilon, scanning r = 0, 1, 2, ...

    One SVD is computed and the residual updated incrementally; the scan
    stops at the first r meeting the tolerance (ties resolve to the
    smallest r, compared with plain <=).  r = k always terminates the
    scan because the full-rank truncation is the matrix itself.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    a = as_matrix(x)
    s = svd(a)
    k = s.k
    resid = a.copy()
    scratch = np.empty_like(resid)
    curve = []
    for r in range(k + 1):
        if r == k:
            mu = 0.0
        else:
            np.abs(resid, out=scratch)
            mu = float(scratch.max())
        curve.append(mu)
        if mu <= epsilon:
            return RankBoundResult(
                epsilon=epsilon, rank_upper_bound=r, mu_curve=np.array(curve)
            )
        resid -= s.singular_values[r] * np.outer(s.u[:, r], s.vt[r])
    raise AssertionError("unreachable: mu_k is 0 for every matrix")


def write_matrix(x, path) -> None:
    """Write a matrix in the EPSR binary format.

    Layout: magic ``EPSR``, version byte 0x01, rows and cols as unsigned
    64-bit little-endian, then rows*cols IEEE-754 binary64 little-endian
    values in row-major order.
    """
    a = as_matrix(x)
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(EPSR_MAGIC)
        fh.write(bytes([EPSR_VERSION]))
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    """Read an EPSR matrix file; the round trip with write_matrix is bit-exact."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != EPSR_MAGIC:
        raise MatrixFormatError("bad magic, not an EPSR file", offset=0)
    if len(data) < 5 or data[4] != EPSR_VERSION:
        raise MatrixFormatError("unsupported or missing version byte", offset=4)
    if len(data) < _HEADER_LEN:
        raise MatrixFormatError("truncated header", offset=len(data))
    rows, cols = struct.unpack_from("<QQ", data, 5)
    if rows == 0 or cols == 0:
        raise MatrixFormatError(f"zero dimension {rows}x{cols}", offset=5)
    if rows * cols > _MAX_ENTRIES:
        raise MatrixFormatError(f"dimension overflow {rows}x{cols}", offset=5)
    expected = rows * cols * 8
    actual = len(data) - _HEADER_LEN
    if actual != expected:
        raise MatrixFormatError(
            f"payload holds {actual} bytes, header promises {expected}",
            offset=min(len(data), _HEADER_LEN),
        )
    a = np.frombuffer(data, dtype="<f8", offset=_HEADER_LEN).reshape(rows, cols)
    finite = np.isfinite(a)
    if not finite.all():
        first_bad = int(np.flatnonzero(~finite.ravel())[0])
        raise MatrixFormatError(
            "non-finite value in payload", offset=_HEADER_LEN + 8 * first_bad
        )
    return a.astype(np.float64)


def export_csv(x, path) -> None:
    """Export a matrix as CSV with 17 significant digits (export only)."""
    a = as_matrix(x)
    with open(path, "w", encoding="ascii") as fh:
        for row in a:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")
