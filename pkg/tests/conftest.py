from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import unitary_group

from hamlearn.mps import apply_two_site_gate, product_state


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_unitary(rng, dim=4):
    return unitary_group.rvs(dim, random_state=rng)


def random_mps(n, chi, rng, layers=3):
    """Brick-wall circuit of random two-qubit unitaries applied to |0...0>."""
    psi = product_state(n, chi)
    for layer in range(layers):
        for site in range(layer % 2, n - 1, 2):
            psi = apply_two_site_gate(psi, site, random_unitary(rng))
    return psi


def apply_dense_gate(vec, n, site, gate):
    """Oracle: a 4x4 gate on qubits (site, site+1) of a dense state vector."""
    psi = vec.reshape((2,) * n)
    g = gate.reshape(2, 2, 2, 2)
    psi = np.tensordot(g, psi, axes=([2, 3], [site, site + 1]))
    psi = np.moveaxis(psi, [0, 1], [site, site + 1])
    return psi.reshape(-1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; returns ``ok``."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
