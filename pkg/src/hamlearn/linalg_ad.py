"""Forward-mode derivative rules for the complex SVD and the Hermitian exponential.

A value with tangents is stored as a *stack*: an array whose leading axis has
length ``1 + nu``; entry 0 is the primal and entries ``1..nu`` are the
directional derivatives. Linear maps act on the stack unchanged, so only the
non-linear primitives below need explicit rules. :class:`TangentBundle` is the
public wrapper around such a stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ContractViolation, DimensionError, DomainError, NumericError
from .tensor_core import _keep_count, gauge_phases


@dataclass(frozen=True)
class TangentBundle:
    """A primal array with ``nu`` directional derivatives of the same shape."""

    primal: NDArray[np.complex128]
    tangents: NDArray[np.complex128]

    def __post_init__(self):
        if self.tangents.shape[1:] != self.primal.shape:
            raise DimensionError(
                f"tangent shape {self.tangents.shape[1:]} does not match primal {self.primal.shape}"
            )

    @classmethod
    def constant(cls, primal: ArrayLike, nu: int = 0) -> "TangentBundle":
        p = np.asarray(primal, dtype=np.complex128)
        return cls(p, np.zeros((nu,) + p.shape, dtype=np.complex128))

    @classmethod
    def from_stack(cls, stack: ArrayLike) -> "TangentBundle":
        st = np.asarray(stack)
        return cls(st[0], st[1:])

    @classmethod
    def of(cls, primal: ArrayLike, tangents: ArrayLike) -> "TangentBundle":
        p = np.asarray(primal, dtype=np.complex128)
        t = np.asarray(tangents, dtype=np.complex128).reshape((-1,) + p.shape)
        return cls(p, t)

    @property
    def nu(self) -> int:
        return self.tangents.shape[0]

    def stack(self) -> NDArray[np.complex128]:
        return np.concatenate([self.primal[None], self.tangents], axis=0)


@dataclass(frozen=True)
class SvdJvpConfig:
    """Regularization and diagonal-splitting settings of the SVD derivative.

    Attributes:
        alpha: Share of the undetermined diagonal assigned to ``dU``; the rest
            goes to ``dV^H``.
        f_cutoff: Tikhonov width for ``1 / (s_j^2 - s_i^2)``.
        s_cutoff: Tikhonov width for ``1 / s_i``.
    """

    alpha: float = 0.5
    f_cutoff: float = 1e-12
    s_cutoff: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError("alpha must lie in [0, 1]")
        if self.f_cutoff <= 0 or self.s_cutoff <= 0:
            raise DomainError("cutoffs must be positive")


DEFAULT_SVD_CFG = SvdJvpConfig()


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def svd_jvp_stack(
    a: NDArray[np.complex128],
    max_rank: int | None = None,
    cfg: SvdJvpConfig = DEFAULT_SVD_CFG,
    *,
    rel_cutoff: float = 0.0,
    fix_gauge: bool = True,
    phase_rng: np.random.Generator | None = None,
):
    """SVD of a stacked matrix ``a`` of shape ``(1 + nu, n, m)``.

    Returns stacks ``u (1+nu, n, r)``, ``s (1+nu, r)`` (real), ``vh (1+nu, r, m)``
    and the discarded weight of the primal. The full thin-SVD derivative is
    computed first and truncated afterwards.
    """
    a = np.asarray(a)
    if a.ndim != 3:
        raise DimensionError(f"expected a stack of matrices, got shape {a.shape}")
    a0 = a[0]
    n, m = a0.shape
    k = min(n, m)
    if max_rank is None:
        max_rank = k
    if max_rank < 1:
        raise DomainError("max_rank must be at least 1")
    if max_rank > k:
        raise DimensionError(f"requested rank {max_rank} exceeds min(n, m) = {k}")
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite entries in SVD input or tangent")

    u, s, vh = np.linalg.svd(a0, full_matrices=False)
    cols = np.arange(k)
    piv = np.argmax(np.abs(u), axis=0)
    ph = gauge_phases(u)
    if phase_rng is not None:
        ph = ph * np.exp(1j * phase_rng.uniform(0, 2 * np.pi, size=ph.shape))
    u *= ph.conj()
    vh *= ph[:, None]
    keep = _keep_count(s, max_rank, rel_cutoff)
    discarded = float(np.sum(s[keep:] ** 2))

    nu = a.shape[0] - 1
    u_st = np.empty((1 + nu, n, keep), dtype=np.complex128)
    s_st = np.empty((1 + nu, keep), dtype=np.complex128)
    vh_st = np.empty((1 + nu, keep, m), dtype=np.complex128)
    u_st[0] = u[:, :keep]
    s_st[0] = s[:keep]
    vh_st[0] = vh[:keep]
    if nu == 0:
        return u_st, s_st, vh_st, discarded

    da = a[1:]
    v = vh.conj().T
    uh = u.conj().T
    dav = da @ v if n > k else None
    uhda = uh @ da if m > k else None
    if dav is not None:
        dat = uh @ dav
    elif uhda is not None:
        dat = uhda @ v
    else:
        dat = uh @ da @ v  # (nu, k, k)
    dat_h = _herm(dat)

    s2 = s * s
    diff = s2[None, :] - s2[:, None]  # s_j^2 - s_i^2 at (i, j); zero on the diagonal
    f = diff / (diff * diff + cfg.f_cutoff**2)
    s_inv = s / (s2 + cfg.s_cutoff**2)

    dd = dat[:, cols, cols]  # (nu, k)
    dut = f * (dat * s + s[:, None] * dat_h)
    dvt = f * (s[:, None] * dat + dat_h * s)
    diag = 1j * s_inv * dd.imag
    dut[:, cols, cols] += cfg.alpha * diag
    # dV~^H gets (1 - alpha) * diag, so dV~ gets its conjugate, -(1 - alpha) * diag.
    dvt[:, cols, cols] -= (1.0 - cfg.alpha) * diag

    du = u @ dut[:, :, :keep]
    dvh = -(dvt[:, :keep] @ vh)
    if dav is not None:
        du += (dav[:, :, :keep] - u @ dat[:, :, :keep]) * s_inv[:keep]
    if uhda is not None:
        dvh += s_inv[:keep, None] * (uhda[:, :keep] - dat[:, :keep] @ vh)

    if fix_gauge and phase_rng is None:
        kc = cols[:keep]
        pk = piv[:keep]
        uref = u[pk, kc].real
        phi = -du[:, pk, kc].imag / uref
        du += 1j * phi[:, None, :] * u[:, :keep]
        dvh -= 1j * phi[:, :, None] * vh[:keep]

    u_st[1:] = du
    s_st[1:] = dd.real[:, :keep]
    vh_st[1:] = dvh
    return u_st, s_st, vh_st, discarded


def svd_jvp(
    a: TangentBundle,
    max_rank: int | None = None,
    cfg: SvdJvpConfig = DEFAULT_SVD_CFG,
    *,
    fix_gauge: bool = True,
):
    """Truncated SVD of ``a.primal`` together with the tangents of its factors.

    With ``fix_gauge`` the factor tangents are those of the phase-fixed SVD
    returned by :func:`~hamlearn.tensor_core.svd_truncated`; otherwise the
    phase is left as chosen by ``cfg.alpha``. The singular-value tangents are
    real.

    Returns:
        ``(u, s, vh, discarded_weight)`` with the first three as bundles.
    """
    if a.primal.ndim != 2:
        raise DimensionError(f"svd_jvp expects a matrix, got shape {a.primal.shape}")
    u, s, vh, w = svd_jvp_stack(a.stack(), max_rank, cfg, fix_gauge=fix_gauge)
    return (TangentBundle.from_stack(u), TangentBundle.from_stack(s.real),
            TangentBundle.from_stack(vh), w)


def _divided_difference(mu: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Matrix ``(e^{mu_a} - e^{mu_b}) / (mu_a - mu_b)`` with the diagonal limit."""
    d = mu[:, None] - mu[None, :]
    eb = np.exp(mu)[None, :]
    small = np.abs(d) < 1e-13
    safe = np.where(small, 1.0, d)
    ratio = np.where(small, 1.0 + 0.5 * d, np.expm1(safe) / safe)
    return eb * ratio


def herm_expm_jvp_stack(h: NDArray[np.complex128], scale: complex, check: bool = True):
    """``exp(scale * h)`` for a stack of Hermitian matrices ``h`` (1+nu, d, d)."""
    h = np.asarray(h, dtype=np.complex128)
    h0 = h[0]
    if check:
        norm = np.linalg.norm(h0)
        if np.linalg.norm(h0 - h0.conj().T) > 1e-12 * max(norm, 1.0):
            raise ContractViolation("matrix exponential input is not Hermitian")
    lam, w = np.linalg.eigh(h0)
    mu = scale * lam
    e0 = (w * np.exp(mu)) @ w.conj().T
    if h.shape[0] == 1:
        return e0[None]
    wh = w.conj().T
    vt = wh @ (scale * h[1:]) @ w
    de = w @ (vt * _divided_difference(mu)) @ wh
    return np.concatenate([e0[None], de], axis=0)


def herm_expm_jvp(h: TangentBundle, scale: complex) -> TangentBundle:
    """Exponential ``exp(scale * h)`` of a Hermitian ``h`` and its tangents.

    Tangents use the eigenbasis closed form of the integral
    ``int_0^1 e^{(1-t)A} V e^{tA} dt`` with ``A = scale*h``, ``V = scale*dh``.
    """
    if h.primal.ndim != 2 or h.primal.shape[0] != h.primal.shape[1]:
        raise DimensionError("herm_expm_jvp expects a square matrix")
    return TangentBundle.from_stack(herm_expm_jvp_stack(h.stack(), scale))
