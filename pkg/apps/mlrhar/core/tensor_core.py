"""
Dense third-order tensor algebra.

Tensors are stored mode-1 fastest (Fortran order). The mode-k unfolding
puts index k on the rows and orders the remaining indices with the lower
mode varying fastest, so for a lag tensor of dims (N, N, P):

    unfolding 1 = (A_1, ..., A_P)
    unfolding 2 = (A_1^T, ..., A_P^T)
    unfolding 3 = (vec A_1, ..., vec A_P)^T

and vec() is always column-major.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionError, DomainValueError

logger = logging.getLogger(__name__)

Dims = tuple[int, int, int]
Ranks = tuple[int, int, int]

RANK_TOLERANCE = 1e-8
MODES = (1, 2, 3)


def _check_mode(mode: int) -> None:
    if mode not in MODES:
        raise DimensionError(f"mode must be one of 1, 2, 3 (got {mode})")


def _as_dims(dims: tuple[int, ...]) -> Dims:
    if len(dims) != 3:
        raise DimensionError(f"expected three dimensions, got {dims}")
    out = (int(dims[0]), int(dims[1]), int(dims[2]))
    if min(out) < 1:
        raise DimensionError(f"dimensions must be positive, got {out}")
    return out


@dataclass(frozen=True, eq=False)
class Tensor3:
    """Immutable real p1 x p2 x p3 tensor."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=float, order="F", copy=True)
        if arr.ndim != 3:
            raise DimensionError(f"Tensor3 needs a 3-d array, got {arr.ndim}-d")
        _as_dims(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise DomainValueError("Tensor3 entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> Dims:
        return _as_dims(self.data.shape)

    @classmethod
    def zeros(cls, dims: tuple[int, ...]) -> "Tensor3":
        return cls(np.zeros(_as_dims(dims), order="F"))

    def vec(self) -> np.ndarray:
        """Column-major vectorization, equal to vec of the mode-1 unfolding."""
        return self.data.ravel(order="F")

    def norm(self) -> float:
        """Frobenius norm."""
        return float(np.linalg.norm(self.data))

    def __add__(self, other: "Tensor3") -> "Tensor3":
        return Tensor3(self.data + other.data)

    def __sub__(self, other: "Tensor3") -> "Tensor3":
        return Tensor3(self.data - other.data)

    def __mul__(self, scalar: float) -> "Tensor3":
        return Tensor3(self.data * float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor3(dims={self.dims}, norm={self.norm():.6g})"


@dataclass(frozen=True, eq=False)
class TuckerFactors:
    """Core tensor and factor matrices with t = core x1 U1 x2 U2 x3 U3."""

    core: Tensor3
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self) -> None:
        if len(self.factors) != 3:
            raise DimensionError("TuckerFactors needs exactly three factor matrices")
        mats = tuple(np.array(u, dtype=float) for u in self.factors)
        for mode, (u, r) in enumerate(zip(mats, self.core.dims, strict=True), start=1):
            if u.ndim != 2 or u.shape[1] != r:
                raise DimensionError(
                    f"factor {mode} has shape {u.shape}, core needs {r} columns"
                )
            u.setflags(write=False)
        object.__setattr__(self, "factors", mats)

    @property
    def ranks(self) -> Ranks:
        return self.core.dims

    @property
    def dims(self) -> Dims:
        return _as_dims(tuple(u.shape[0] for u in self.factors))

    def reconstruct(self) -> Tensor3:
        out = self.core
        for mode, u in enumerate(self.factors, start=1):
            out = mode_multiply(out, u, mode)
        return out


@dataclass(frozen=True, eq=False)
class PermutationMap:
    """Index form of the permutation matrix with vec(unfold_j) = T_ij vec(unfold_i)."""

    source: int
    target: int
    dims: Dims
    indices: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Permute the leading axis (a vector, or the rows of a matrix)."""
        values = np.asarray(values)
        if values.shape[0] != self.indices.size:
            raise DimensionError(
                f"permutation of length {self.indices.size} applied to {values.shape[0]} rows"
            )
        return values[self.indices]

    def inverse(self) -> "PermutationMap":
        inv = np.empty_like(self.indices)
        inv[self.indices] = np.arange(self.indices.size)
        return PermutationMap(self.target, self.source, self.dims, inv)

    def matrix(self) -> np.ndarray:
        """Dense permutation matrix."""
        return np.eye(self.indices.size)[self.indices]


def _unfold(arr: np.ndarray, mode: int) -> np.ndarray:
    return np.reshape(np.moveaxis(arr, mode - 1, 0), (arr.shape[mode - 1], -1), order="F")


def matricize(t: Tensor3, mode: int) -> np.ndarray:
    """
    Mode-k unfolding of a tensor.

    The mode-1 unfolding is a read-only view of the tensor storage.

    Args:
        t: Tensor to unfold
        mode: 1, 2 or 3

    Returns:
        p_k x (product of the other dims) matrix
    """
    _check_mode(mode)
    return _unfold(t.data, mode)


def fold(m: np.ndarray, mode: int, dims: tuple[int, ...]) -> Tensor3:
    """Inverse of matricize for the given mode and tensor dims."""
    _check_mode(mode)
    dims = _as_dims(dims)
    m = np.asarray(m, dtype=float)
    rest = [dims[k] for k in range(3) if k != mode - 1]
    expected = (dims[mode - 1], rest[0] * rest[1])
    if m.shape != expected:
        raise DimensionError(f"cannot fold {m.shape} along mode {mode}; expected {expected}")
    arr = np.reshape(m, (dims[mode - 1], *rest), order="F")
    return Tensor3(np.moveaxis(arr, 0, mode - 1))


def mode_multiply(t: Tensor3, m: np.ndarray, mode: int) -> Tensor3:
    """Mode-k product t x_k m."""
    _check_mode(mode)
    m = np.atleast_2d(np.asarray(m, dtype=float))
    dims = t.dims
    if m.shape[1] != dims[mode - 1]:
        raise DimensionError(
            f"mode-{mode} product needs {dims[mode - 1]} columns, matrix has {m.shape[1]}"
        )
    new_dims = list(dims)
    new_dims[mode - 1] = m.shape[0]
    return fold(m @ matricize(t, mode), mode, tuple(new_dims))


def _svd(m: np.ndarray, full_matrices: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return linalg.svd(m, full_matrices=full_matrices, lapack_driver="gesdd")
    except linalg.LinAlgError:
        logger.debug("gesdd did not converge, retrying with gesvd")
        return linalg.svd(m, full_matrices=full_matrices, lapack_driver="gesvd")


def _fix_signs(u: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive."""
    if u.size == 0:
        return u
    rows = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[rows, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def left_singular_vectors(m: np.ndarray, r: int) -> np.ndarray:
    """
    Top-r left singular vectors with the deterministic sign convention.

    When r exceeds the thin SVD width the basis is completed from the full SVD.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if not 1 <= r <= m.shape[0]:
        raise DimensionError(f"cannot take {r} left singular vectors of a {m.shape} matrix")
    u, _, _ = _svd(m, full_matrices=r > min(m.shape))
    return _fix_signs(u[:, :r])


def truncate_rank(m: np.ndarray, r: int) -> np.ndarray:
    """
    Best rank-r approximation in Frobenius norm.

    Ties at the truncation boundary keep the first r singular triplets in
    LAPACK's descending order.
    """
    if r < 1:
        raise DimensionError(f"rank must be at least 1 (got {r})")
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if r >= min(m.shape):
        return m.copy()
    u, s, vt = _svd(m)
    return (u[:, :r] * s[:r]) @ vt[:r]


def _check_ranks(dims: Dims, ranks: tuple[int, ...]) -> Ranks:
    if len(ranks) != 3:
        raise DimensionError(f"expected three ranks, got {ranks}")
    out = (int(ranks[0]), int(ranks[1]), int(ranks[2]))
    for mode, (r, p) in enumerate(zip(out, dims, strict=True), start=1):
        if not 1 <= r <= p:
            raise DimensionError(f"rank {r} for mode {mode} must lie in [1, {p}]")
    return out


def project_tucker(t: Tensor3, ranks: tuple[int, ...]) -> Tensor3:
    """Sequential mode-1, mode-2, mode-3 rank truncation onto Tucker ranks."""
    ranks = _check_ranks(t.dims, ranks)
    out = t
    for mode, r in zip(MODES, ranks, strict=True):
        mat = matricize(out, mode)
        if r < min(mat.shape):
            out = fold(truncate_rank(mat, r), mode, out.dims)
    return out


def hosvd(t: Tensor3, ranks: tuple[int, ...]) -> TuckerFactors:
    """Truncated higher-order SVD."""
    ranks = _check_ranks(t.dims, ranks)
    factors = tuple(
        left_singular_vectors(matricize(t, mode), r) for mode, r in zip(MODES, ranks, strict=True)
    )
    core = t
    for mode, u in zip(MODES, factors, strict=True):
        core = mode_multiply(core, u.T, mode)
    return TuckerFactors(core=core, factors=factors)  # type: ignore[arg-type]


def multilinear_ranks(t: Tensor3, tol: float = RANK_TOLERANCE) -> Ranks:
    """Numerical ranks of the three unfoldings, relative to each largest singular value."""
    ranks = []
    for mode in MODES:
        s = linalg.svdvals(matricize(t, mode))
        ranks.append(0 if s[0] == 0 else int(np.sum(s > tol * s[0])))
    return (ranks[0], ranks[1], ranks[2])


def certify_ranks(t: Tensor3, ranks: tuple[int, ...], tol: float = RANK_TOLERANCE) -> bool:
    """True when sigma_{r+1} < tol * sigma_1 for every unfolding."""
    actual = multilinear_ranks(t, tol)
    return all(a <= r for a, r in zip(actual, ranks, strict=True))


def mode_permutation(i: int, j: int, dims: tuple[int, ...]) -> PermutationMap:
    """Permutation taking vec of the mode-i unfolding to vec of the mode-j unfolding."""
    _check_mode(i)
    _check_mode(j)
    dims = _as_dims(dims)
    labels = np.arange(dims[0] * dims[1] * dims[2]).reshape(dims, order="F")
    vec_i = _unfold(labels, i).ravel(order="F")
    vec_j = _unfold(labels, j).ravel(order="F")
    position_in_i = np.argsort(vec_i)
    return PermutationMap(source=i, target=j, dims=dims, indices=position_in_i[vec_j])
