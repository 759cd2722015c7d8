from __future__ import annotations

import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from hamlearn.data import exact_evolve, rotate_dense
from hamlearn.errors import DomainError
from hamlearn.hamiltonian import HeisenbergModel, draw_target
from hamlearn.mps import SplitOptions, product_state, rotated_sites
from hamlearn.tebd import TruncationWarning, born_probabilities, born_probability, evolve, outcome_table


def test_zero_hamiltonian_is_identity():
    model = HeisenbergModel(4)
    snaps = evolve(product_state(4), model, np.zeros(model.nu), [0.1, 0.3])
    for s in snaps:
        np.testing.assert_allclose(s.to_dense(), product_state(4).to_dense(), atol=1e-12)


def test_single_bond_exact_for_any_dt(rng):
    model = HeisenbergModel(2)
    theta = rng.uniform(-1, 1, model.nu)
    ref = expm(-0.37j * model.dense_hamiltonian(theta))[:, 0]
    for dt in (0.37, 0.1, 0.01):
        psi = evolve(product_state(2), model, theta, [0.37], dt=dt)[0]
        np.testing.assert_allclose(psi.to_dense(), ref, atol=1e-10)


def test_n6_matches_exact_solver():
    model = HeisenbergModel(6)
    theta = draw_target(6, 1).to_theta()
    psi = evolve(product_state(6, 64), model, theta, [1.0], dt=0.01, chi=64)[0]
    ex = exact_evolve(model, theta, 1.0)
    assert 1 - abs(np.vdot(ex.vector, psi.to_dense())) <= 1e-4


def test_snapshots_equal_separate_runs(rng):
    model = HeisenbergModel(5)
    theta = rng.uniform(-1, 1, model.nu)
    snaps = evolve(product_state(5), model, theta, [0.2, 0.4, 0.6], dt=0.05)
    for t, s in zip([0.2, 0.4, 0.6], snaps):
        ref = evolve(product_state(5), model, theta, [t], dt=0.05)[0]
        assert abs(np.vdot(ref.to_dense(), s.to_dense())) == pytest.approx(1.0, abs=1e-12)


def test_times_must_be_ascending():
    model = HeisenbergModel(3)
    with pytest.raises(DomainError):
        evolve(product_state(3), model, np.zeros(model.nu), [0.4, 0.2])
    with pytest.raises(DomainError):
        evolve(product_state(3), model, np.zeros(model.nu), [-0.1])


def test_truncation_alarm():
    model = HeisenbergModel(8)
    theta = draw_target(8, 0).to_theta()
    with pytest.warns(TruncationWarning):
        evolve(product_state(8, 2), model, theta, [1.0], dt=0.1, chi=2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        evolve(product_state(8), model, theta, [0.2], dt=0.1, chi=30)


def test_born_probability_at_time_zero():
    model = HeisenbergModel(3)
    psi = evolve(product_state(3), model, draw_target(3, 0).to_theta(), [0.0], with_tangents=True)[0]
    p, g = born_probability(psi, "ZZZ", "000")
    assert p == pytest.approx(1.0)
    np.testing.assert_allclose(g, 0, atol=1e-15)
    assert born_probability(psi, "ZZZ", "010")[0] == pytest.approx(0.0, abs=1e-30)


def test_born_probability_against_oracle_and_fd(rng):
    model = HeisenbergModel(3)
    theta = draw_target(3, 5).to_theta()
    basis = "XYZ"
    psi = evolve(product_state(3), model, theta, [0.2], dt=0.05, with_tangents=True)[0]
    exact = np.abs(rotate_dense(exact_evolve(model, theta, 0.2).vector, 3, basis)) ** 2
    h = 1e-5
    for idx, s in enumerate(outcome_table(3)):
        p, g = born_probability(psi, basis, s)
        assert p == pytest.approx(exact[idx], abs=1e-4)  # Trotter error at dt = 0.05
        fd = np.empty(model.nu)
        for l in range(model.nu):
            e = np.eye(model.nu)[l] * h
            pp = born_probability(evolve(product_state(3), model, theta + e, [0.2], dt=0.05)[0], basis, s)[0]
            pm = born_probability(evolve(product_state(3), model, theta - e, [0.2], dt=0.05)[0], basis, s)[0]
            fd[l] = (pp - pm) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_fine_step_probability_matches_oracle():
    model = HeisenbergModel(3)
    theta = draw_target(3, 5).to_theta()
    psi = evolve(product_state(3), model, theta, [0.2], dt=0.001)[0]
    exact = np.abs(rotate_dense(exact_evolve(model, theta, 0.2).vector, 3, "XYZ")) ** 2
    p, _ = born_probabilities(psi, ["XYZ"] * 8, outcome_table(3))
    np.testing.assert_allclose(p, exact, atol=1e-8)


def test_probabilities_normalized_per_basis(rng):
    model = HeisenbergModel(6)
    theta = draw_target(6, 3).to_theta()
    psi = evolve(product_state(6), model, theta, [0.6])[0]
    rot = rotated_sites(psi)
    for _ in range(3):
        b = rng.integers(0, 3, 6)
        p, _ = born_probabilities(psi, np.tile(b, (64, 1)), outcome_table(6), rot)
        assert p.sum() == pytest.approx(1.0, abs=1e-6)


def test_gauge_invariance_of_probabilities(rng):
    model = HeisenbergModel(5)
    theta = draw_target(5, 7).to_theta()
    bases = rng.integers(0, 3, size=(20, 5))
    bits = rng.integers(0, 2, size=(20, 5))
    ref = evolve(product_state(5), model, theta, [0.4], with_tangents=True)[0]
    rnd = evolve(product_state(5), model, theta, [0.4], with_tangents=True,
                 opts=SplitOptions(phase_rng=np.random.default_rng(4)))[0]
    p0, g0 = born_probabilities(ref, bases, bits)
    p1, g1 = born_probabilities(rnd, bases, bits)
    np.testing.assert_allclose(p1, p0, atol=1e-10)
    np.testing.assert_allclose(g1, g0, atol=1e-10)


def test_tangents_match_fd_many_triples(rng):
    n = 5
    model = HeisenbergModel(n)
    theta = rng.uniform(-1, 1, model.nu)
    times = [0.2, 0.4]
    snaps = evolve(product_state(n), model, theta, times, with_tangents=True)
    bases = rng.integers(0, 3, size=(20, n))
    bits = rng.integers(0, 2, size=(20, n))
    which = rng.integers(0, 2, size=20)
    h = 1e-5
    plus = [evolve(product_state(n), model, theta + h * e, times) for e in np.eye(model.nu)]
    minus = [evolve(product_state(n), model, theta - h * e, times) for e in np.eye(model.nu)]
    for j in range(2):
        sel = which == j
        _, g = born_probabilities(snaps[j], bases[sel], bits[sel])
        fd = np.stack([(born_probabilities(plus[l][j], bases[sel], bits[sel])[0]
                        - born_probabilities(minus[l][j], bases[sel], bits[sel])[0]) / (2 * h)
                       for l in range(model.nu)], axis=1)
        scale = np.maximum(np.abs(g), 1e-4)
        assert np.max(np.abs(g - fd) / scale) <= 1e-5


def test_fixed_bonds_same_state():
    model = HeisenbergModel(5)
    theta = draw_target(5, 2).to_theta()
    ref = evolve(product_state(5, 12), model, theta, [0.3, 0.6], chi=12)
    fix = evolve(product_state(5, 12), model, theta, [0.3, 0.6], chi=12, opts=SplitOptions(fixed_bonds=True))
    for r, f in zip(ref, fix):
        assert f.bond_dims == [12] * 4
        np.testing.assert_allclose(f.to_dense(), r.to_dense(), atol=1e-12)
    with pytest.raises(DomainError):
        evolve(product_state(5), model, theta, [0.3], with_tangents=True, opts=SplitOptions(fixed_bonds=True))
