"""Synthetic measurement data: exact solver, sampling, dataset files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import solve_ivp

from .errors import DimensionError, DomainError, ParseError, ResourceError
from .hamiltonian import HamiltonianModel
from .linalg_ad import herm_expm_jvp_stack
from .mps import BASIS_LETTERS, BASIS_ROTATIONS, draw_uniforms, parse_basis, product_state
from .tebd import DEFAULT_CHI, DEFAULT_DT, evolve

EXACT_SITE_CAP = 20
EXACT_HARD_CAP = 26
DENSE_EXPM_MAX_SITES = 12
FORMAT_NAME = "hamlearn-dataset"
FORMAT_VERSION = 1

DEFAULT_TAU = 0.2
DEFAULT_K = 100
DEFAULT_J = 5


@dataclass(frozen=True)
class ExactState:
    """Dense state vector of ``n`` qubits, site 0 most significant."""

    n: int
    vector: NDArray[np.complex128]

    def probabilities(self, basis: str) -> NDArray[np.float64]:
        return np.abs(rotate_dense(self.vector, self.n, basis)) ** 2


def rotate_dense(vec: NDArray, n: int, basis: str | Sequence[str]) -> NDArray:
    """Apply the per-qubit measurement rotations of ``basis`` to a dense vector.

    ``vec`` may carry leading batch axes.
    """
    idx = parse_basis(basis, n)
    lead = vec.shape[:-1]
    psi = vec.reshape(lead + (2,) * n)
    off = len(lead)
    for site, b in enumerate(idx):
        if b == 2:
            continue
        psi = np.moveaxis(np.tensordot(BASIS_ROTATIONS[b], psi, axes=([1], [off + site])), 0, off + site)
    return psi.reshape(lead + (2**n,))


def _check_cap(n: int, cap: int):
    if n > min(cap, EXACT_HARD_CAP):
        raise ResourceError(f"exact simulation of {n} sites exceeds the cap of {min(cap, EXACT_HARD_CAP)}")


def exact_states(model: HamiltonianModel, theta: ArrayLike, times: Sequence[float],
                 cap: int = EXACT_SITE_CAP) -> list[ExactState]:
    """``exp(-i H t)|0...0>`` for each ``t``.

    Dense eigendecomposition up to 12 sites, adaptive Runge-Kutta (DOP853,
    rtol 1e-10) beyond.
    """
    n = model.n
    _check_cap(n, cap)
    dim = 2**n
    psi0 = np.zeros(dim, dtype=np.complex128)
    psi0[0] = 1.0
    times = [float(t) for t in times]
    if n <= DENSE_EXPM_MAX_SITES:
        h = model.dense_hamiltonian(theta)
        lam, w = np.linalg.eigh(h)
        c = w.conj().T @ psi0
        return [ExactState(n, psi0.copy() if t == 0 else w @ (np.exp(-1j * lam * t) * c)) for t in times]
    h = model.dense_hamiltonian(theta, sparse=True)
    out = []
    for t in times:
        if t == 0:
            out.append(ExactState(n, psi0.copy()))
            continue
        sol = solve_ivp(lambda _, y: -1j * (h @ y), (0.0, t), psi0, method="DOP853",
                        rtol=1e-10, atol=1e-12)
        v = sol.y[:, -1]
        out.append(ExactState(n, v / np.linalg.norm(v)))
    return out


def exact_evolve(model: HamiltonianModel, theta: ArrayLike, t: float,
                 cap: int = EXACT_SITE_CAP) -> ExactState:
    """Exact state at time ``t`` starting from ``|0...0>``."""
    return exact_states(model, theta, [t], cap)[0]


def exact_state_tangents(model: HamiltonianModel, theta: ArrayLike, t: float,
                         cap: int = 12) -> NDArray[np.complex128]:
    """Exact state and its parameter derivatives, ``(1 + nu, 2**n)``.

    Uses the Frechet derivative of the dense matrix exponential.
    """
    _check_cap(model.n, cap)
    hs = model.dense_hamiltonian_stack(theta)
    e = herm_expm_jvp_stack(hs, -1j * t)
    return e[:, :, 0]


def sample_dense(vec: NDArray, n: int, basis: str, uniforms: NDArray) -> NDArray[np.uint8]:
    """Sequential conditional sampling from a dense state.

    Uses the same rule as :func:`hamlearn.mps.sample_uniforms`, so matched
    uniforms give matched samples when the distributions agree.
    """
    p = np.abs(rotate_dense(vec, n, basis)) ** 2
    p = p / p.sum()
    m = uniforms.shape[0]
    out = np.zeros((m, n), dtype=np.uint8)
    prefix = np.zeros(m, dtype=np.int64)
    marg_prev = np.ones(1)
    for site in range(n):
        marg = p.reshape(2 ** (site + 1), -1).sum(axis=1)
        p0 = marg[2 * prefix]
        tot = marg_prev[prefix]
        bit = uniforms[:, site] >= p0 / tot
        out[:, site] = bit
        prefix = 2 * prefix + bit
        marg_prev = marg
    return out


@dataclass
class Dataset:
    """Measurement records ``s_{i,j,k}`` grouped by time stamp and basis.

    Attributes:
        n: Number of qubits.
        times: Ascending positive time stamps ``t_1..t_J``.
        bases: Pauli basis strings ``p_1..p_K``.
        cells: ``(d, 2)`` zero-based ``(j, k)`` cell of each record.
        samples: ``(d, n)`` bit-strings.
        metadata: Free-form generator information (model, seed, theta_star, ...).
    """

    n: int
    times: list[float]
    bases: list[str]
    cells: NDArray[np.int64]
    samples: NDArray[np.uint8]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        self.samples = np.asarray(self.samples, dtype=np.uint8).reshape(-1, self.n)
        self.validate()

    def validate(self):
        if not self.times or not self.bases:
            raise DomainError("a dataset needs at least one time stamp and one basis")
        if any(t <= 0 for t in self.times):
            raise DomainError("time stamps must be positive")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise DomainError("time stamps must be ascending")
        for b in self.bases:
            parse_basis(b, self.n)
        if self.cells.shape[0] != self.samples.shape[0]:
            raise DimensionError("cells and samples disagree in length")
        if self.cells.size and (self.cells[:, 0].max() >= len(self.times) or self.cells[:, 1].max() >= len(self.bases)
                                or self.cells.min() < 0):
            raise DomainError("cell index out of range")
        if np.any(self.samples > 1):
            raise DomainError("samples must be bits")

    @property
    def d(self) -> int:
        return int(self.samples.shape[0])

    @property
    def J(self) -> int:
        return len(self.times)

    @property
    def K(self) -> int:
        return len(self.bases)

    def counts(self) -> NDArray[np.int64]:
        """``d_{j,k}`` as a ``(J, K)`` array."""
        c = np.zeros((self.J, self.K), dtype=np.int64)
        np.add.at(c, (self.cells[:, 0], self.cells[:, 1]), 1)
        return c

    @property
    def theta_star(self) -> NDArray[np.float64] | None:
        ts = self.metadata.get("theta_star")
        return None if ts is None else np.asarray(ts, dtype=np.float64)

    def subset(self, idx: ArrayLike) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.n, list(self.times), list(self.bases), self.cells[idx],
                       self.samples[idx], dict(self.metadata))

    def restrict(self, times: Sequence[int] | None = None, bases: Sequence[int] | None = None) -> "Dataset":
        """Keep only the given time-stamp and basis indices (re-indexed)."""
        tj = list(range(self.J)) if times is None else list(times)
        bk = list(range(self.K)) if bases is None else list(bases)
        jmap = {j: a for a, j in enumerate(tj)}
        kmap = {k: a for a, k in enumerate(bk)}
        keep = np.array([(j in jmap and k in kmap) for j, k in self.cells], dtype=bool)
        cells = np.array([(jmap[j], kmap[k]) for j, k in self.cells[keep]], dtype=np.int64).reshape(-1, 2)
        return Dataset(self.n, [self.times[j] for j in tj], [self.bases[k] for k in bk],
                       cells, self.samples[keep], dict(self.metadata))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.n == other.n and self.times == other.times and self.bases == other.bases
                and np.array_equal(self.cells, other.cells) and np.array_equal(self.samples, other.samples)
                and self.metadata == other.metadata)


def random_bases(n: int, count: int, seed: int) -> list[str]:
    """``count`` bases with letters drawn uniformly from XYZ."""
    rng = np.random.default_rng(seed)
    return ["".join(BASIS_LETTERS[i] for i in row) for row in rng.integers(0, 3, size=(count, n))]


def protocol_times(J: int = DEFAULT_J, tau: float = DEFAULT_TAU) -> list[float]:
    """``tau, 2 tau, ..., J tau``."""
    return [round((j + 1) * tau, 12) for j in range(J)]


def generate_dataset(
    model: HamiltonianModel,
    theta_star: ArrayLike,
    times: Sequence[float],
    bases_spec,
    M: int | ArrayLike,
    engine: str = "exact",
    rng_seed: int = 0,
    *,
    dt: float = DEFAULT_DT,
    chi: int = DEFAULT_CHI,
    exact_cap: int = EXACT_SITE_CAP,
) -> Dataset:
    """Sample ``M`` outcomes per (time stamp, basis) cell from ``H(theta_star)``.

    Args:
        bases_spec: A list of basis strings, or ``(K, seed)`` for ``K`` uniformly
            random bases.
        M: Samples per cell, or a ``(J, K)`` array of per-cell counts.
        engine: ``"exact"`` (dense state vector) or ``"tebd"``.
        rng_seed: Cell ``(j, k)`` draws from the counter-based stream
            ``(rng_seed, j, k)``.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    times = [float(t) for t in times]
    if not times or any(t <= 0 for t in times):
        raise DomainError("time stamps must be positive")
    if isinstance(bases_spec, tuple) and len(bases_spec) == 2 and isinstance(bases_spec[0], (int, np.integer)):
        bases = random_bases(model.n, int(bases_spec[0]), int(bases_spec[1]))
    else:
        bases = [str(b).upper() for b in bases_spec]
    for b in bases:
        parse_basis(b, model.n)
    counts = np.broadcast_to(np.asarray(M, dtype=np.int64), (len(times), len(bases)))
    if np.any(counts < 0):
        raise DomainError("sample counts must be non-negative")

    if engine == "exact":
        vecs = [s.vector for s in exact_states(model, theta_star, times, exact_cap)]
        draw = lambda j, basis, u: sample_dense(vecs[j], model.n, basis, u)  # noqa: E731
    elif engine == "tebd":
        from .mps import sample_uniforms

        snaps = evolve(product_state(model.n, chi), model, theta_star, times, dt=dt, chi=chi)
        draw = lambda j, basis, u: sample_uniforms(snaps[j], basis, u)  # noqa: E731
    else:
        raise DomainError(f"unknown engine {engine!r}")

    cells, samples = [], []
    for j in range(len(times)):
        for k, basis in enumerate(bases):
            m = int(counts[j, k])
            u = draw_uniforms((rng_seed, j, k), m, model.n)
            samples.append(draw(j, basis, u))
            cells.append(np.tile([j, k], (m, 1)))
    meta = {
        "model": getattr(model, "name", "generic"),
        "engine": engine,
        "seed": int(rng_seed),
        "theta_star": [float(x) for x in theta_star],
        "theta_names": list(model.theta_names),
    }
    if engine == "tebd":
        meta.update(dt=float(dt), chi=int(chi))
    return Dataset(model.n, times, bases, np.concatenate(cells), np.concatenate(samples), meta)


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write the text format: a JSON header line, then ``j k bitstring`` records (1-based)."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n": ds.n,
        "times": list(ds.times),
        "bases": list(ds.bases),
        "counts": ds.counts().tolist(),
        "d": ds.d,
        "metadata": ds.metadata,
    }
    chars = (ds.samples + ord("0")).astype(np.uint8)
    lines = [json.dumps(header, sort_keys=True)]
    for (j, k), row in zip(ds.cells, chars):
        lines.append(f"{j + 1} {k + 1} {row.tobytes().decode()}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_dataset(path: str | Path) -> Dataset:
    """Parse a dataset file; errors name the offending line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty dataset file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"header is not valid JSON ({exc.msg})", 1) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ParseError("header is not a hamlearn dataset header", 1)
    try:
        n = int(header["n"])
        times = [float(t) for t in header["times"]]
        bases = [str(b) for b in header["bases"]]
        metadata = header.get("metadata", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"header field missing or malformed: {exc}", 1) from None
    if n < 1:
        raise ParseError("n must be positive", 1)
    for b in bases:
        if len(b) != n:
            raise ParseError(f"basis {b!r} has length {len(b)}, expected {n}", 1)
        bad = set(b) - set(BASIS_LETTERS)
        if bad:
            raise ParseError(f"unknown basis letter {sorted(bad)[0]!r} in {b!r}", 1)
    d = len(lines) - 1
    cells = np.empty((d, 2), dtype=np.int64)
    samples = np.empty((d, n), dtype=np.uint8)
    J, K = len(times), len(bases)
    for r, line in enumerate(lines[1:]):
        lineno = r + 2
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'j k bitstring', got {line!r}", lineno)
        try:
            j, k = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError("time and basis indices must be integers", lineno) from None
        if not 1 <= j <= J:
            raise ParseError(f"time index {j} outside 1..{J}", lineno)
        if not 1 <= k <= K:
            raise ParseError(f"basis index {k} outside 1..{K}", lineno)
        bits = parts[2]
        if len(bits) != n:
            raise ParseError(f"record length {len(bits)} != n = {n}", lineno)
        row = np.frombuffer(bits.encode("ascii", errors="replace"), dtype=np.uint8) - ord("0")
        if np.any(row > 1):
            raise ParseError(f"bit-string {bits!r} contains characters other than 0/1", lineno)
        cells[r] = (j - 1, k - 1)
        samples[r] = row
    if "counts" in header:
        ds_counts = np.zeros((J, K), dtype=np.int64)
        np.add.at(ds_counts, (cells[:, 0], cells[:, 1]), 1)
        if ds_counts.tolist() != header["counts"]:
            raise ParseError("record counts disagree with the header", 1)
    try:
        return Dataset(n, times, bases, cells, samples, metadata)
    except (DomainError, DimensionError) as exc:
        raise ParseError(str(exc), 1) from None
