"""Time evolution of MPS under Trotterized Hamiltonians, with tangents."""

from __future__ import annotations

import logging
import warnings
from dataclasses import replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError
from .hamiltonian import HamiltonianModel, build_trotter_plan
from .mps import (
    DEFAULT_SPLIT,
    Mps,
    SplitOptions,
    _apply_gate_inplace,
    amplitude_stack,
    amplitudes_batch,
    pad_bonds,
    parse_basis,
    parse_bits,
    rotate_to_basis,
    rotated_sites,
)

log = logging.getLogger(__name__)

DEFAULT_CHI = 30
DEFAULT_DT = 0.05
DISCARD_ALARM = 1e-3


class TruncationWarning(UserWarning):
    """Accumulated truncation error exceeded the alarm threshold."""


def evolve(
    psi0: Mps,
    model: HamiltonianModel,
    theta: ArrayLike,
    times: Sequence[float],
    dt: float = DEFAULT_DT,
    chi: int = DEFAULT_CHI,
    with_tangents: bool = False,
    *,
    opts: SplitOptions = DEFAULT_SPLIT,
    alarm: float = DISCARD_ALARM,
) -> list[Mps]:
    """Evolve ``psi0`` under ``H(theta)`` and return one snapshot per time stamp.

    All stamps share one sweep. Between consecutive stamps the interval is
    split into second-order Trotter steps of size ``dt`` (shrunk to divide the
    interval exactly if needed). With ``with_tangents`` every tensor carries
    ``model.nu`` parameter derivatives.

    ``opts.fixed_bonds`` keeps every inner bond at exactly ``chi`` by zero
    padding, the static tensor layout of compiled implementations. It costs
    more at small ``n`` and is only available without tangents, where padded
    zero singular values are harmless.
    """
    theta = np.asarray(theta, dtype=np.float64)
    times = [float(t) for t in times]
    if any(t < 0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise DomainError("time stamps must be non-negative and ascending")
    if chi < 1:
        raise DomainError("chi must be positive")
    if psi0.n != model.n:
        raise DomainError(f"state has {psi0.n} sites, model {model.n}")

    if opts.fixed_bonds and with_tangents:
        raise DomainError("fixed bond dimensions are only supported without tangents")

    nu = model.nu if with_tangents else 0
    psi = psi0.with_tangents(nu) if with_tangents else psi0.primal()
    if opts.fixed_bonds:
        psi = pad_bonds(psi, chi)
    tensors = list(psi.tensors)
    center = psi.center
    discarded = psi.discarded_weight
    gate_cache: dict[float, dict] = {}
    snapshots = []
    t_now = 0.0
    for t in times:
        span = t - t_now
        if span > 1e-12:
            plan = build_trotter_plan(model.n, span, dt)
            if plan.adjusted:
                log.info("step %.6g does not divide %.6g; using %.12g", dt, span, plan.dt)
            gates = gate_cache.get(plan.dt)
            if gates is None:
                gates = plan.gates(model, theta, with_tangents)
                gate_cache[plan.dt] = gates
            for layer in plan.layers:
                bonds = layer.bonds
                if abs(center - bonds[0]) <= abs(center - bonds[-1] - 1):
                    order, absorb = bonds, "right"
                else:
                    order, absorb = bonds[::-1], "left"
                for b in order:
                    center, w = _apply_gate_inplace(
                        tensors, center, b, gates[(b, layer.weight)], chi, absorb, opts)
                    discarded += w
            t_now = t
        snapshots.append(replace(psi, tensors=tuple(tensors), center=center,
                                 chi=chi, discarded_weight=discarded))
    if discarded > alarm:
        warnings.warn(f"accumulated discarded weight {discarded:.3e} exceeds {alarm:.1e}; "
                      "consider a larger bond dimension", TruncationWarning, stacklevel=2)
    return snapshots


def born_probability(psi_t: Mps, basis: str | Sequence[str], s: str | ArrayLike):
    """Probability of outcome ``s`` when measuring ``psi_t`` in ``basis``.

    Returns:
        ``(p, grad)`` where ``grad`` has length ``psi_t.nu`` (empty without tangents).
    """
    amp = amplitude_stack(rotate_to_basis(psi_t, basis), s)
    p = float(abs(amp[0]) ** 2)
    grad = 2.0 * np.real(np.conj(amp[0]) * amp[1:])
    return p, grad


def born_probabilities(psi_t: Mps, basis_idx: ArrayLike, bits: ArrayLike, rot=None):
    """Vectorized :func:`born_probability` over ``B`` (basis, bit-string) pairs.

    Args:
        basis_idx: ``(B, n)`` array of basis indices (0, 1, 2 for X, Y, Z) or a
            list of basis strings.
        bits: ``(B, n)`` outcomes.
        rot: Precomputed :func:`rotated_sites` of ``psi_t``.

    Returns:
        ``(p, grad)`` with shapes ``(B,)`` and ``(B, nu)``.
    """
    bits = np.asarray(bits)
    if len(basis_idx) and isinstance(basis_idx[0], str):
        basis_idx = np.array([parse_basis(b, psi_t.n) for b in basis_idx])
    basis_idx = np.asarray(basis_idx)
    if rot is None:
        rot = rotated_sites(psi_t)
    amp = amplitudes_batch(rot, basis_idx, bits)
    p = np.abs(amp[0]) ** 2
    grad = 2.0 * np.real(np.conj(amp[0])[None, :] * amp[1:]).T
    return p, grad


def outcome_table(n: int) -> NDArray[np.uint8]:
    """All ``2**n`` bit-strings in lexicographic order, site 0 first."""
    idx = np.arange(2**n)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1).astype(np.uint8)


__all__ = [
    "DEFAULT_CHI",
    "DEFAULT_DT",
    "TruncationWarning",
    "born_probabilities",
    "born_probability",
    "evolve",
    "outcome_table",
    "parse_bits",
]
