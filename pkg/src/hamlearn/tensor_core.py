"""Dense complex tensor arithmetic.

Tensors are plain ``numpy`` arrays of dtype ``complex128`` (row-major, shape
metadata carried by the array). The functions here add the validation and the
deterministic SVD conventions the rest of the package relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError, DomainError, NumericError

ComplexTensor = NDArray[np.complex128]


def as_tensor(a: ArrayLike) -> ComplexTensor:
    """Convert to a finite complex128 array."""
    t = np.asarray(a, dtype=np.complex128)
    if not np.all(np.isfinite(t)):
        raise NumericError("tensor contains NaN or Inf entries")
    return t


def contract(a: ArrayLike, b: ArrayLike, axes: Sequence[tuple[int, int]]) -> ComplexTensor:
    """Sum over paired axes of ``a`` and ``b``.

    The result carries the free axes of ``a`` followed by the free axes of
    ``b``, each in their original order.

    Args:
        a, b: Input tensors.
        axes: Pairs ``(axis_of_a, axis_of_b)`` to contract.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    axes = list(axes)
    ax_a = [p[0] % a.ndim for p in axes] if a.ndim else []
    ax_b = [p[1] % b.ndim for p in axes] if b.ndim else []
    if len(set(ax_a)) != len(ax_a) or len(set(ax_b)) != len(ax_b):
        raise DimensionError("an axis appears twice in the contraction list")
    for i, j in zip(ax_a, ax_b):
        if a.shape[i] != b.shape[j]:
            raise DimensionError(
                f"contracted axes differ in length: a[{i}]={a.shape[i]} vs b[{j}]={b.shape[j]}"
            )
    return np.tensordot(a, b, axes=(ax_a, ax_b))


def reshape(a: ArrayLike, shape: Sequence[int]) -> ComplexTensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise DimensionError(f"axis lengths must be positive, got {shape}")
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} ({a.size} entries) into {shape}")
    return np.reshape(a, shape)


def transpose(a: ArrayLike, perm: Sequence[int]) -> ComplexTensor:
    a = as_tensor(a)
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(a.ndim)):
        raise DimensionError(f"{perm} is not a permutation of {a.ndim} axes")
    return np.transpose(a, perm)


@dataclass(frozen=True)
class SvdFactors:
    """Truncated singular value decomposition ``A ~ u @ diag(s) @ vh``.

    Attributes:
        u: Left singular vectors, shape ``(n, k)``.
        s: Singular values, non-negative and sorted descending.
        vh: Right singular vectors (conjugate transposed), shape ``(k, m)``.
        discarded_weight: Sum of squares of the dropped singular values.
    """

    u: ComplexTensor
    s: NDArray[np.float64]
    vh: ComplexTensor
    discarded_weight: float

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    def reconstruct(self) -> ComplexTensor:
        return (self.u * self.s) @ self.vh


def gauge_phases(u: ComplexTensor) -> ComplexTensor:
    """Unit phases that make the largest-magnitude entry of each column real-positive.

    Multiplying ``u`` column-wise by ``conj(phase)`` applies the fix.
    """
    pivot = np.argmax(np.abs(u), axis=0)
    entries = u[pivot, np.arange(u.shape[1])]
    mag = np.abs(entries)
    return np.where(mag > 0, entries / np.where(mag > 0, mag, 1.0), 1.0)


def _keep_count(s: NDArray[np.float64], max_rank: int, rel_cutoff: float) -> int:
    keep = min(max_rank, s.shape[0])
    if rel_cutoff > 0 and s.shape[0] and s[0] > 0:
        keep = min(keep, max(1, int(np.count_nonzero(s > rel_cutoff * s[0]))))
    return keep


def svd_truncated(
    a: ArrayLike,
    max_rank: int,
    *,
    rel_cutoff: float = 0.0,
    phase_rng: np.random.Generator | None = None,
) -> SvdFactors:
    """Deterministic truncated SVD of a matrix.

    Singular triplets come out in LAPACK order (descending), then each left
    singular vector is rotated so its largest-magnitude entry is real and
    positive. At most ``max_rank`` triplets are kept; with ``rel_cutoff > 0``
    triplets with ``s <= rel_cutoff * s[0]`` are dropped as well (at least one
    survives).

    ``phase_rng`` replaces the deterministic phase fix by random phases. It
    exists to test that downstream quantities are gauge invariant.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"svd_truncated expects a matrix, got shape {a.shape}")
    if max_rank < 1:
        raise DomainError("max_rank must be at least 1")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    ph = gauge_phases(u)
    if phase_rng is not None:
        ph = ph * np.exp(1j * phase_rng.uniform(0, 2 * np.pi, size=ph.shape))
    u = u * ph.conj()
    vh = vh * ph[:, None]
    keep = _keep_count(s, max_rank, rel_cutoff)
    discarded = float(np.sum(s[keep:] ** 2))
    return SvdFactors(u[:, :keep], s[:keep], vh[:keep], discarded)
