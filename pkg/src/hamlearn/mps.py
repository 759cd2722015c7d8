"""Matrix-product states with optional forward-mode tangents.

Every site tensor is stored as a stack of shape ``(1 + nu, chi_left, 2, chi_right)``
(see :mod:`hamlearn.linalg_ad`); ``nu = 0`` is the plain, non-differentiable
case. The state is kept in mixed canonical form around ``center``: sites left
of it are left-orthonormal, sites right of it are right-orthonormal. Bonds are
split with SVDs only, so differentiable and plain runs share one kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ContractViolation, DimensionError, DomainError, NumericError
from .linalg_ad import DEFAULT_SVD_CFG, SvdJvpConfig, svd_jvp_stack

HADAMARD = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
Y_TO_Z = np.array([[1, -1j], [1, 1j]], dtype=np.complex128) / np.sqrt(2)
BASIS_LETTERS = "XYZ"
# Rows: single-qubit rotations taking the X, Y, Z eigenbases to the computational basis.
BASIS_ROTATIONS = np.stack([HADAMARD, Y_TO_Z, np.eye(2, dtype=np.complex128)])

DEFAULT_REL_CUTOFF = 1e-14


@dataclass(frozen=True)
class Mps:
    """Open-boundary MPS of ``n`` qubits.

    Attributes:
        tensors: Site stacks ``(1 + nu, chi_l, 2, chi_r)``; boundary bonds have size 1.
        chi: Maximal bond dimension kept after a split.
        center: Orthogonality center.
        discarded_weight: Accumulated squared singular values dropped by truncation.
    """

    tensors: tuple[NDArray[np.complex128], ...]
    chi: int
    center: int = 0
    discarded_weight: float = 0.0

    @property
    def n(self) -> int:
        return len(self.tensors)

    @property
    def nu(self) -> int:
        return self.tensors[0].shape[0] - 1

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[3] for t in self.tensors[:-1]]

    def primal(self) -> "Mps":
        """Copy without tangents."""
        return replace(self, tensors=tuple(t[:1] for t in self.tensors))

    def with_tangents(self, nu: int) -> "Mps":
        """Attach ``nu`` zero tangents (a parameter-independent state)."""
        if self.nu == nu:
            return self
        pad = [np.concatenate([t[:1], np.zeros((nu,) + t.shape[1:], t.dtype)]) for t in self.tensors]
        return replace(self, tensors=tuple(pad))

    def norm(self) -> float:
        return float(np.linalg.norm(self.tensors[self.center][0]))

    def to_dense(self) -> NDArray[np.complex128]:
        """State vector of length ``2**n`` (site 0 most significant)."""
        return self.to_dense_stack()[0]

    def to_dense_stack(self) -> NDArray[np.complex128]:
        """State vector and its tangents, shape ``(1 + nu, 2**n)``."""
        acc = self.tensors[0]
        for t in self.tensors[1:]:
            acc = _dual(lambda p, q: np.einsum("...xa,...asb->...xsb", p, q), acc.reshape(acc.shape[0], -1, acc.shape[-1]), t)
            acc = acc.reshape(acc.shape[0], -1, acc.shape[-1])
        return acc.reshape(acc.shape[0], -1)


def _dual(fn, x: NDArray, y: NDArray) -> NDArray:
    """Apply a bilinear ``fn`` to two stacks using the product rule."""
    p = fn(x[0], y[0])
    if x.shape[0] == 1 and y.shape[0] == 1:
        return p[None]
    t = None
    if x.shape[0] > 1:
        t = fn(x[1:], y[0])
    if y.shape[0] > 1:
        ty = fn(x[0], y[1:])
        t = ty if t is None else t + ty
    return np.concatenate([p[None], t], axis=0)


def _renormalize(s: NDArray) -> NDArray:
    """Scale a singular-value stack to unit primal norm, with the matching tangent."""
    s0 = s[0].real
    nrm = np.linalg.norm(s0)
    if nrm == 0:
        raise NumericError("state collapsed to zero norm")
    if s.shape[0] == 1:
        return (s / nrm)
    ds = s[1:].real
    ds_n = ds / nrm - np.outer(ds @ s0, s0) / nrm**3
    return np.concatenate([(s0 / nrm)[None], ds_n], axis=0).astype(s.dtype)


def _scale_rows(s: NDArray, vh: NDArray) -> NDArray:
    """Stack product ``diag(s) @ vh``."""
    return _dual(lambda a, b: a[..., :, None] * b, s, vh)


def _scale_cols(u: NDArray, s: NDArray) -> NDArray:
    return _dual(lambda a, b: a * b[..., None, :], u, s)


@dataclass(frozen=True)
class SplitOptions:
    """Settings shared by every SVD split of a run."""

    svd_cfg: SvdJvpConfig = DEFAULT_SVD_CFG
    rel_cutoff: float = DEFAULT_REL_CUTOFF
    phase_rng: np.random.Generator | None = None
    fixed_bonds: bool = False


def _pad_factors(u: NDArray, s: NDArray, vh: NDArray, k: int):
    """Zero-pad an SVD stack to exactly ``k`` singular triplets."""
    extra = k - s.shape[-1]
    if extra <= 0:
        return u, s, vh
    return (np.pad(u, ((0, 0), (0, 0), (0, extra))), np.pad(s, ((0, 0), (0, extra))),
            np.pad(vh, ((0, 0), (0, extra), (0, 0))))


DEFAULT_SPLIT = SplitOptions()


def _split(theta: NDArray, chi: int, absorb: str, opts: SplitOptions):
    """Split a two-site stack ``(D, a, 2, 2, b)`` into two site stacks."""
    d, a, _, _, b = theta.shape
    mat = theta.reshape(d, 2 * a, 2 * b)
    u, s, vh, w = svd_jvp_stack(mat, min(chi, 2 * a, 2 * b), opts.svd_cfg,
                                rel_cutoff=opts.rel_cutoff, phase_rng=opts.phase_rng)
    s = _renormalize(s)
    if opts.fixed_bonds:
        u, s, vh = _pad_factors(u, s, vh, chi)
    k = s.shape[1]
    if absorb == "right":
        left = u.reshape(d, a, 2, k)
        right = _scale_rows(s, vh).reshape(d, k, 2, b)
    else:
        left = _scale_cols(u, s).reshape(d, a, 2, k)
        right = vh.reshape(d, k, 2, b)
    return left, right, w


def _merge(left: NDArray, right: NDArray) -> NDArray:
    return _dual(lambda p, q: np.einsum("...asc,...ctb->...astb", p, q), left, right)


def _shift_center(tensors: list, center: int, target: int, opts: SplitOptions) -> int:
    """Move the orthogonality center in place with single-site SVDs."""
    while center < target:
        t = tensors[center]
        d, a, _, b = t.shape
        u, s, vh, _ = svd_jvp_stack(t.reshape(d, 2 * a, b), None, opts.svd_cfg,
                                    rel_cutoff=opts.rel_cutoff, phase_rng=opts.phase_rng)
        s = _renormalize(s)
        if opts.fixed_bonds:
            u, s, vh = _pad_factors(u, s, vh, b)
        k = s.shape[1]
        tensors[center] = u.reshape(d, a, 2, k)
        r = _scale_rows(s, vh)
        tensors[center + 1] = _dual(lambda p, q: np.einsum("...kb,...bsc->...ksc", p, q), r, tensors[center + 1])
        center += 1
    while center > target:
        t = tensors[center]
        d, a, _, b = t.shape
        u, s, vh, _ = svd_jvp_stack(t.reshape(d, a, 2 * b), None, opts.svd_cfg,
                                    rel_cutoff=opts.rel_cutoff, phase_rng=opts.phase_rng)
        s = _renormalize(s)
        if opts.fixed_bonds:
            u, s, vh = _pad_factors(u, s, vh, a)
        k = s.shape[1]
        tensors[center] = vh.reshape(d, k, 2, b)
        l = _scale_cols(u, s)
        tensors[center - 1] = _dual(lambda p, q: np.einsum("...ask,...kb->...asb", p, q), tensors[center - 1], l)
        center -= 1
    return center


def move_center(psi: Mps, target: int, opts: SplitOptions = DEFAULT_SPLIT) -> Mps:
    if not 0 <= target < psi.n:
        raise DomainError(f"site {target} outside the chain")
    tensors = list(psi.tensors)
    c = _shift_center(tensors, psi.center, target, opts)
    return replace(psi, tensors=tuple(tensors), center=c)


def pad_bonds(psi: Mps, chi: int | None = None) -> Mps:
    """Zero-pad every inner bond to exactly ``chi``; the state is unchanged."""
    chi = psi.chi if chi is None else chi
    if any(d > chi for d in psi.bond_dims):
        raise DomainError("a bond already exceeds the requested dimension")
    out = []
    for i, t in enumerate(psi.tensors):
        left = 0 if i == 0 else chi - t.shape[1]
        right = 0 if i == psi.n - 1 else chi - t.shape[3]
        out.append(np.pad(t, ((0, 0), (0, left), (0, 0), (0, right))))
    return replace(psi, tensors=tuple(out), chi=chi)


def product_state(n: int, chi: int = 30, nu: int = 0) -> Mps:
    """``|0...0>`` with all bonds of dimension one."""
    if n < 2:
        raise DomainError("an MPS needs at least two sites")
    if chi < 1:
        raise DomainError("chi must be positive")
    site = np.zeros((1 + nu, 1, 2, 1), dtype=np.complex128)
    site[0, 0, 0, 0] = 1.0
    return Mps(tensors=tuple(site.copy() for _ in range(n)), chi=chi, center=0)


def _gate_stack(gate: ArrayLike, check_unitary: bool) -> NDArray:
    g = gate.stack() if hasattr(gate, "stack") else np.asarray(gate, dtype=np.complex128)
    if g.shape == (2, 2, 2, 2) or g.shape == (4, 4):
        g = g.reshape(1, 4, 4)
    elif g.ndim == 5 and g.shape[1:] == (2, 2, 2, 2):
        g = g.reshape(g.shape[0], 4, 4)
    if g.ndim != 3 or g.shape[1:] != (4, 4):
        raise DimensionError(f"two-site gate must be 4x4 or (2,2,2,2), got {g.shape}")
    if check_unitary:
        err = np.linalg.norm(g[0].conj().T @ g[0] - np.eye(4))
        if err > 1e-12 * 4:
            raise ContractViolation(f"gate is not unitary (||G^H G - 1|| = {err:.2e})")
    return g


def _apply_gate_inplace(tensors: list, center: int, site: int, g: NDArray, chi: int,
                        absorb: str, opts: SplitOptions) -> tuple[int, float]:
    if center < site:
        center = _shift_center(tensors, center, site, opts)
    elif center > site + 1:
        center = _shift_center(tensors, center, site + 1, opts)
    theta = _merge(tensors[site], tensors[site + 1])
    d, a, _, _, b = theta.shape
    g4 = g.reshape(g.shape[0], 2, 2, 2, 2)
    theta = _dual(lambda p, q: np.einsum("...uvst,...astb->...auvb", p, q), g4, theta)
    left, right, w = _split(theta, chi, absorb, opts)
    tensors[site] = left
    tensors[site + 1] = right
    return (site + 1 if absorb == "right" else site), w


def apply_two_site_gate(
    psi: Mps,
    site: int,
    gate,
    chi: int | None = None,
    *,
    absorb: str = "right",
    opts: SplitOptions = DEFAULT_SPLIT,
    check_unitary: bool = True,
) -> Mps:
    """Apply a gate to sites ``(site, site + 1)`` and re-split with truncation.

    Args:
        psi: Input state; it is not modified.
        site: Left site of the pair.
        gate: ``4x4`` / ``(2,2,2,2)`` unitary, a stack ``(1+nu, 4, 4)`` or a
            :class:`~hamlearn.linalg_ad.TangentBundle`. Index order is
            ``(out_site, out_site+1, in_site, in_site+1)``.
        chi: Bond cap, defaults to ``psi.chi``.
        absorb: Which side keeps the singular values (``"right"`` or ``"left"``).
    """
    if not 0 <= site < psi.n - 1:
        raise DomainError(f"gate site {site} outside [0, {psi.n - 2}]")
    g = _gate_stack(gate, check_unitary)
    chi = psi.chi if chi is None else chi
    tensors = list(psi.tensors)
    center, w = _apply_gate_inplace(tensors, psi.center, site, g, chi, absorb, opts)
    return replace(psi, tensors=tuple(tensors), center=center,
                   discarded_weight=psi.discarded_weight + w)


def parse_basis(basis: str | Sequence[str], n: int) -> NDArray[np.intp]:
    """Pauli basis string over ``XYZ`` to indices into :data:`BASIS_ROTATIONS`."""
    letters = "".join(basis).upper()
    if len(letters) != n:
        raise DimensionError(f"basis {letters!r} has length {len(letters)}, expected {n}")
    try:
        return np.array([BASIS_LETTERS.index(c) for c in letters], dtype=np.intp)
    except ValueError:
        raise DomainError(f"basis {letters!r} contains letters outside XYZ") from None


def parse_bits(s: str | ArrayLike, n: int) -> NDArray[np.uint8]:
    if isinstance(s, str):
        if set(s) - {"0", "1"}:
            raise DomainError(f"bit-string {s!r} contains characters other than 0/1")
        bits = np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")
    else:
        bits = np.asarray(s, dtype=np.uint8)
    if bits.shape != (n,):
        raise DimensionError(f"bit-string of length {bits.size}, expected {n}")
    if np.any(bits > 1):
        raise DomainError("bits must be 0 or 1")
    return bits.astype(np.uint8)


def rotate_to_basis(psi: Mps, basis: str | Sequence[str]) -> Mps:
    """Rotate each qubit so that measuring ``Z`` afterwards measures ``basis``."""
    idx = parse_basis(basis, psi.n)
    tensors = tuple(
        np.einsum("ts,dasb->datb", BASIS_ROTATIONS[b], t) if b != 2 else t
        for b, t in zip(idx, psi.tensors)
    )
    # Single-site unitaries keep every site's orthonormality property.
    return replace(psi, tensors=tensors)


def rotated_sites(psi: Mps) -> list[NDArray[np.complex128]]:
    """Per site, the tensor rotated to each of X, Y, Z: ``(3, 1+nu, chi_l, 2, chi_r)``."""
    return [np.einsum("xts,dasb->xdatb", BASIS_ROTATIONS, t) for t in psi.tensors]


def amplitudes_batch(rot: list[NDArray], basis_idx: NDArray, bits: NDArray,
                     chunk: int = 4096) -> NDArray[np.complex128]:
    """Amplitudes ``<s|U_p|psi>`` and their tangents for many (basis, bit-string) pairs.

    Args:
        rot: Output of :func:`rotated_sites`.
        basis_idx: ``(B, n)`` integers in ``{0, 1, 2}`` for ``X, Y, Z``.
        bits: ``(B, n)`` outcomes.

    Returns:
        Stack ``(1 + nu, B)``.
    """
    basis_idx = np.asarray(basis_idx)
    bits = np.asarray(bits)
    nb = bits.shape[0]
    dd = rot[0].shape[1]
    out = np.empty((dd, nb), dtype=np.complex128)
    for lo in range(0, nb, chunk):
        hi = min(lo + chunk, nb)
        bi = basis_idx[lo:hi]
        si = bits[lo:hi]
        bsz = hi - lo
        env = None
        for site, r in enumerate(rot):
            g = r[bi[:, site], :, :, si[:, site], :]  # (bsz, D, chi_l, chi_r)
            g = np.moveaxis(g, 1, 0)
            if env is None:
                env = g[:, :, 0, :]
                continue
            p = np.einsum("ba,bac->bc", env[0], g[0])
            if dd == 1:
                env = p[None]
                continue
            t = np.einsum("dba,bac->dbc", env[1:], g[0]) + np.einsum("ba,dbac->dbc", env[0], g[1:])
            env = np.concatenate([p[None], t])
        out[:, lo:hi] = env[:, :, 0] if bsz else env
    return out


def amplitude_stack(psi: Mps, s: str | ArrayLike) -> NDArray[np.complex128]:
    """Amplitude ``<s|psi>`` and its ``nu`` tangents."""
    bits = parse_bits(s, psi.n)
    env = psi.tensors[0][:, :, bits[0], :]
    for site in range(1, psi.n):
        env = _dual(lambda p, q: p @ q, env, psi.tensors[site][:, :, bits[site], :])
    return env[:, 0, 0]


def amplitude(psi: Mps, s: str | ArrayLike) -> complex:
    """Overlap ``<s|psi>`` by left-to-right contraction."""
    return complex(amplitude_stack(psi, s)[0])


def sample_uniforms(psi: Mps, basis: str | Sequence[str], uniforms: ArrayLike) -> NDArray[np.uint8]:
    """Sequential conditional sampling driven by given uniforms ``(M, n)``.

    Bit ``i`` of draw ``r`` is 0 when ``uniforms[r, i]`` is below the
    conditional probability of 0 given the bits already drawn.
    """
    u = np.asarray(uniforms, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != psi.n:
        raise DimensionError(f"uniforms must have shape (M, {psi.n})")
    state = rotate_to_basis(move_center(psi.primal(), 0), basis)
    m = u.shape[0]
    out = np.zeros((m, psi.n), dtype=np.uint8)
    env = np.ones((m, 1), dtype=np.complex128)
    for site, t in enumerate(state.tensors):
        a = t[0]
        v0 = env @ a[:, 0, :]
        v1 = env @ a[:, 1, :]
        p0 = np.sum(np.abs(v0) ** 2, axis=1)
        p1 = np.sum(np.abs(v1) ** 2, axis=1)
        tot = p0 + p1
        if np.any(np.abs(tot - 1.0) > 1e-8):
            raise NumericError(f"conditional probabilities at site {site} sum to "
                               f"{tot.min():.12f}..{tot.max():.12f}, not 1")
        bit = u[:, site] >= p0 / tot
        out[:, site] = bit
        pick = np.where(bit[:, None], v1, v0)
        env = pick / np.sqrt(np.where(bit, p1, p0))[:, None]
    return out


def sample(psi: Mps, basis: str | Sequence[str], count: int, rng_seed: int) -> NDArray[np.uint8]:
    """Draw ``count`` bit-strings from the Born distribution in ``basis``.

    Returns an array ``(count, n)``. Draw ``r`` depends only on ``(rng_seed, r)``.
    """
    if count < 0:
        raise DomainError("count must be non-negative")
    u = draw_uniforms(rng_seed, count, psi.n)
    return sample_uniforms(psi, basis, u)


def draw_uniforms(seed: int | Sequence[int], count: int, n: int) -> NDArray[np.float64]:
    """Uniforms from a counter-based stream keyed by ``seed``; row ``r`` is draw ``r``."""
    key = [int(x) for x in np.atleast_1d(seed)]
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
    return gen.random((count, n))
