"""Parametrized nearest-neighbour spin-chain Hamiltonians and Trotter plans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError
from .linalg_ad import TangentBundle, herm_expm_jvp_stack

I2 = np.eye(2, dtype=np.complex128)
X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)

TARGET_COUPLINGS = (-1.0, -0.5, -0.4)


class HamiltonianModel:
    """A differentiable map from parameters to two-site bond generators.

    ``H(theta) = sum_i h_{i,i+1}(theta)`` on an open chain of ``n`` qubits.
    Subclasses implement :meth:`bond_stack`; generators must be Hermitian and
    smooth in ``theta``.
    """

    name = "generic"

    def __init__(self, n: int, theta_names: list[str]):
        if n < 2:
            raise DomainError("a chain needs at least two sites")
        self.n = n
        self.theta_names = list(theta_names)

    @property
    def nu(self) -> int:
        return len(self.theta_names)

    def bond_stack(self, theta: ArrayLike, with_tangents: bool = True) -> NDArray[np.complex128]:
        """All generators as an array ``(n-1, 1+nu, 4, 4)``; entry 0 is the primal."""
        raise NotImplementedError

    def bond_generator(self, theta: ArrayLike, i: int) -> TangentBundle:
        if not 0 <= i < self.n - 1:
            raise DomainError(f"bond index {i} outside [0, {self.n - 2}]")
        return TangentBundle.from_stack(self.bond_stack(theta)[i])

    def _check_theta(self, theta: ArrayLike) -> NDArray[np.float64]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.nu,):
            raise DomainError(f"expected {self.nu} parameters, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("parameters must be finite")
        return theta

    def dense_hamiltonian(self, theta: ArrayLike, sparse: bool = False):
        """The full ``2^n x 2^n`` Hamiltonian (site 0 is the most significant qubit)."""
        gens = self.bond_stack(theta, with_tangents=False)[:, 0]
        dim = 2**self.n
        h = sp.csr_matrix((dim, dim), dtype=np.complex128)
        for i, g in enumerate(gens):
            left = sp.identity(2**i, dtype=np.complex128, format="csr")
            right = sp.identity(2 ** (self.n - i - 2), dtype=np.complex128, format="csr")
            h = h + sp.kron(sp.kron(left, sp.csr_matrix(g)), right, format="csr")
        return h if sparse else h.toarray()

    def dense_hamiltonian_stack(self, theta: ArrayLike) -> NDArray[np.complex128]:
        """Dense Hamiltonian with its ``nu`` parameter derivatives, ``(1+nu, 2^n, 2^n)``."""
        gens = self.bond_stack(theta)
        dim = 2**self.n
        out = np.zeros((1 + self.nu, dim, dim), dtype=np.complex128)
        for i in range(self.n - 1):
            left = np.eye(2**i)
            right = np.eye(2 ** (self.n - i - 2))
            for c in range(1 + self.nu):
                out[c] += np.kron(np.kron(left, gens[i, c]), right)
        return out


class AffineModel(HamiltonianModel):
    """Generators linear in ``theta``: ``h_i = sum_l theta_l G_{i,l}``."""

    def __init__(self, n: int, theta_names: list[str], basis: NDArray[np.complex128]):
        super().__init__(n, theta_names)
        basis = np.asarray(basis, dtype=np.complex128)
        if basis.shape != (n - 1, self.nu, 4, 4):
            raise DomainError(f"basis has shape {basis.shape}, expected {(n - 1, self.nu, 4, 4)}")
        if not np.allclose(basis, np.conj(np.swapaxes(basis, -1, -2)), atol=1e-14):
            raise DomainError("generator basis must be Hermitian")
        self.basis = basis

    def bond_stack(self, theta, with_tangents=True):
        theta = self._check_theta(theta)
        primal = np.einsum("l,ilab->iab", theta, self.basis)
        if not with_tangents:
            return primal[:, None]
        return np.concatenate([primal[:, None], self.basis], axis=1)


@dataclass(frozen=True)
class HeisenbergParams:
    """Couplings of the XYZ chain with a transverse X field on every site."""

    jx: float
    jy: float
    jz: float
    h: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.h)

    def to_theta(self) -> NDArray[np.float64]:
        return np.array([self.jx, self.jy, self.jz, *self.h], dtype=np.float64)

    @classmethod
    def from_theta(cls, theta: ArrayLike) -> "HeisenbergParams":
        t = np.asarray(theta, dtype=np.float64)
        return cls(float(t[0]), float(t[1]), float(t[2]), tuple(float(x) for x in t[3:]))


class HeisenbergModel(AffineModel):
    """``H = sum_i (Jx X_i X_{i+1} + Jy Y_i Y_{i+1} + Jz Z_i Z_{i+1}) + sum_i h_i X_i``.

    Parameters are ordered ``(jx, jy, jz, h_0, ..., h_{n-1})`` so ``nu = 3 + n``.
    The field on site ``i`` lives in bond ``(i, i+1)``; the last site's field is
    added to the last bond.
    """

    name = "heisenberg"

    def __init__(self, n: int):
        if n < 2:
            raise DomainError("a chain needs at least two sites")
        names = ["jx", "jy", "jz"] + [f"h_{i}" for i in range(n)]
        basis = np.zeros((n - 1, 3 + n, 4, 4), dtype=np.complex128)
        for i in range(n - 1):
            basis[i, 0] = np.kron(X, X)
            basis[i, 1] = np.kron(Y, Y)
            basis[i, 2] = np.kron(Z, Z)
            basis[i, 3 + i] = np.kron(X, I2)
        basis[n - 2, 3 + n - 1] = np.kron(I2, X)
        super().__init__(n, names, basis)


def heisenberg_bond_generator(params: HeisenbergParams, i: int) -> TangentBundle:
    """Bond generator ``h_{i,i+1}`` of the Heisenberg chain with its tangents."""
    return HeisenbergModel(params.n).bond_generator(params.to_theta(), i)


def draw_target(n: int, rng_seed: int) -> HeisenbergParams:
    """Benchmark target: fixed couplings, fields drawn uniformly from [-1, 1]."""
    if n < 2:
        raise DomainError("a chain needs at least two sites")
    rng = np.random.default_rng(rng_seed)
    h = rng.uniform(-1.0, 1.0, size=n)
    jx, jy, jz = TARGET_COUPLINGS
    return HeisenbergParams(jx, jy, jz, tuple(float(x) for x in h))


MODELS = {"heisenberg": HeisenbergModel}


def make_model(name: str, n: int) -> HamiltonianModel:
    try:
        return MODELS[name](n)
    except KeyError:
        raise DomainError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None


@dataclass(frozen=True)
class TrotterLayer:
    """Gates ``exp(-i * weight * dt * h_b)`` for the mutually disjoint bonds ``b``."""

    bonds: tuple[int, ...]
    weight: float


@dataclass(frozen=True)
class TrotterPlan:
    """Second-order splitting of ``exp(-i t H)`` into brick-wall layers.

    Each step is ``A(1/2) B(1) A(1/2)`` with ``A`` the bonds ``0, 2, 4, ...``
    and ``B`` the bonds ``1, 3, ...``; consecutive ``A`` half layers of
    adjacent steps are merged.

    Attributes:
        t: Total evolution time.
        dt: Effective step, ``t / steps`` exactly.
        steps: Number of symmetric steps.
        requested_dt: The step asked for; differs from ``dt`` when ``t`` is
            not a multiple of it.
        layers: The layer sequence to apply in order.
    """

    t: float
    dt: float
    steps: int
    requested_dt: float
    layers: tuple[TrotterLayer, ...] = field(repr=False)

    @property
    def adjusted(self) -> bool:
        return abs(self.dt - self.requested_dt) > 1e-9 * self.requested_dt

    def gate_keys(self) -> set[tuple[int, float]]:
        return {(b, layer.weight) for layer in self.layers for b in layer.bonds}

    def gates(self, model: HamiltonianModel, theta: ArrayLike, with_tangents: bool = True):
        """Gate stacks ``(1+nu, 4, 4)`` keyed by ``(bond, weight)``."""
        gens = model.bond_stack(theta, with_tangents=with_tangents)
        return {
            (b, w): herm_expm_jvp_stack(gens[b], -1j * w * self.dt)
            for b, w in sorted(self.gate_keys())
        }


def steps_for(t: float, dt: float) -> int:
    """Number of steps of size close to ``dt`` that exactly cover ``t``."""
    if not t > 0:
        raise DomainError("evolution time must be positive")
    if not 0 < dt:
        raise DomainError("time step must be positive")
    ratio = t / dt
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        return int(nearest)
    return max(1, math.ceil(ratio))


def build_trotter_plan(model: HamiltonianModel | int, t: float, dt: float) -> TrotterPlan:
    """Second-order brick-wall plan for evolving for time ``t``."""
    n = model if isinstance(model, int) else model.n
    if not t > 0:
        raise DomainError("evolution time must be positive")
    if not 0 < dt <= t * (1 + 1e-12):
        raise DomainError("time step must satisfy 0 < dt <= t")
    steps = steps_for(t, dt)
    dt_eff = t / steps
    a = tuple(range(0, n - 1, 2))
    b = tuple(range(1, n - 1, 2))
    layers = [TrotterLayer(a, 0.5)]
    for s in range(steps):
        if b:
            layers.append(TrotterLayer(b, 1.0))
        layers.append(TrotterLayer(a, 1.0 if s < steps - 1 else 0.5))
    if not b:
        # Single-bond chain: all A layers commute, so fuse them into one gate.
        layers = [TrotterLayer(a, float(steps))]
    return TrotterPlan(t=t, dt=dt_eff, steps=steps, requested_dt=dt, layers=tuple(layers))


def pauli_string_hamiltonian(terms: list[tuple[float, dict[int, NDArray]]], n: int) -> NDArray:
    """Dense Hamiltonian from ``(coefficient, {site: 2x2 operator})`` terms."""
    dim = 2**n
    h = np.zeros((dim, dim), dtype=np.complex128)
    for coef, ops in terms:
        mats = [ops.get(i, I2) for i in range(n)]
        h += coef * reduce(np.kron, mats)
    return h
