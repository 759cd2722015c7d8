from __future__ import annotations

import time

import numpy as np
import pytest
from scipy.linalg import expm

from hamlearn.data import (
    Dataset,
    exact_evolve,
    exact_state_tangents,
    exact_states,
    generate_dataset,
    protocol_times,
    random_bases,
    read_dataset,
    write_dataset,
)
from hamlearn.errors import DomainError, ParseError, ResourceError
from hamlearn.hamiltonian import HeisenbergModel, draw_target
from hamlearn.mps import product_state
from hamlearn.tebd import born_probabilities, evolve, outcome_table


def small_dataset():
    return Dataset(3, [0.2, 0.4], ["XYZ", "ZZZ"], [[0, 0], [1, 1], [0, 1]],
                   [[0, 1, 1], [1, 1, 1], [0, 0, 0]], {"model": "heisenberg", "seed": 3})


def test_exact_state_at_zero():
    st = exact_evolve(HeisenbergModel(4), draw_target(4, 0).to_theta(), 0.0)
    assert st.vector[0] == pytest.approx(1.0)
    assert np.linalg.norm(st.vector[1:]) == 0


def test_zz_eigenstate_probabilities_constant():
    model = HeisenbergModel(2)
    theta = np.array([0.0, 0.0, 0.8, 0.0, 0.0])
    for t in (0.3, 1.7):
        p = exact_evolve(model, theta, t).probabilities("ZZ")
        np.testing.assert_allclose(p, [1, 0, 0, 0], atol=1e-14)


def test_exact_vs_tebd_cross_validation():
    model = HeisenbergModel(6)
    theta = draw_target(6, 4).to_theta()
    psi = evolve(product_state(6, 64), model, theta, [0.2], dt=0.005, chi=64)[0]
    assert 1 - abs(np.vdot(exact_evolve(model, theta, 0.2).vector, psi.to_dense())) <= 1e-6


def test_runge_kutta_branch_matches_expm():
    model = HeisenbergModel(13)
    theta = draw_target(13, 2).to_theta()
    st = exact_evolve(model, theta, 0.3)
    v0 = np.zeros(2**13, complex)
    v0[0] = 1
    from scipy.sparse.linalg import expm_multiply

    ref = expm_multiply(-0.3j * model.dense_hamiltonian(theta, sparse=True), v0)
    assert np.linalg.norm(st.vector - ref) < 1e-8
    assert abs(np.linalg.norm(st.vector) - 1) < 1e-10


def test_site_cap():
    with pytest.raises(ResourceError):
        exact_evolve(HeisenbergModel(21), np.zeros(24), 0.1)
    with pytest.raises(ResourceError):
        exact_evolve(HeisenbergModel(8), np.zeros(11), 0.1, cap=6)


def test_exact_tangents_match_fd(rng):
    model = HeisenbergModel(3)
    theta = rng.uniform(-1, 1, model.nu)
    st = exact_state_tangents(model, theta, 0.5)
    h = 1e-6
    for l in range(model.nu):
        e = np.eye(model.nu)[l] * h
        fd = (exact_evolve(model, theta + e, 0.5).vector - exact_evolve(model, theta - e, 0.5).vector) / (2 * h)
        np.testing.assert_allclose(st[1 + l], fd, atol=1e-8)


def test_counting():
    model = HeisenbergModel(4)
    ds = generate_dataset(model, draw_target(4, 0).to_theta(), [0.2], ["XXXX", "ZZZZ"], 3)
    assert ds.d == 6
    assert ds.counts().tolist() == [[3, 3]]
    assert ds.metadata["theta_star"] == list(draw_target(4, 0).to_theta())


def test_times_must_be_positive():
    model = HeisenbergModel(3)
    with pytest.raises(DomainError):
        generate_dataset(model, np.zeros(6), [0.0, 0.2], ["ZZZ"], 1)


def test_per_cell_counts():
    model = HeisenbergModel(3)
    ds = generate_dataset(model, draw_target(3, 1).to_theta(), [0.2, 0.4], ["XYZ", "ZZZ"], [[1, 2], [0, 5]])
    assert ds.counts().tolist() == [[1, 2], [0, 5]]


def test_tv_against_exact_distribution():
    model = HeisenbergModel(4)
    theta = draw_target(4, 6).to_theta()
    ds = generate_dataset(model, theta, [0.4], ["XYZY"], 100_000, rng_seed=2)
    freq = np.bincount(ds.samples @ (1 << np.arange(3, -1, -1)), minlength=16) / ds.d
    p = exact_evolve(model, theta, 0.4).probabilities("XYZY")
    assert 0.5 * np.abs(freq - p).sum() <= 0.01


def test_engines_agree_on_probabilities_and_samples():
    model = HeisenbergModel(5)
    theta = draw_target(5, 8).to_theta()
    bases = random_bases(5, 4, 1)
    psi = evolve(product_state(5, 32), model, theta, [0.3], dt=0.001, chi=32)[0]
    exact = exact_evolve(model, theta, 0.3)
    for b in bases:
        p, _ = born_probabilities(psi, [b] * 32, outcome_table(5))
        np.testing.assert_allclose(p, exact.probabilities(b), atol=1e-6)
    a = generate_dataset(model, theta, [0.3], bases, 200, "exact", 4)
    b = generate_dataset(model, theta, [0.3], bases, 200, "tebd", 4, dt=0.001, chi=32)
    assert np.mean(a.samples != b.samples) < 0.01


def test_generation_deterministic():
    model = HeisenbergModel(4)
    args = (model, draw_target(4, 0).to_theta(), protocol_times(2), (3, 5), 10)
    assert generate_dataset(*args, rng_seed=1) == generate_dataset(*args, rng_seed=1)
    assert generate_dataset(*args, rng_seed=1) != generate_dataset(*args, rng_seed=2)


def test_protocol_defaults():
    assert protocol_times() == [0.2, 0.4, 0.6, 0.8, 1.0]
    bases = random_bases(6, 100, 0)
    assert len(bases) == 100 and all(len(b) == 6 and set(b) <= set("XYZ") for b in bases)


def test_round_trip(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "d.txt")
    assert read_dataset(tmp_path / "d.txt") == ds
    lines = (tmp_path / "d.txt").read_text().splitlines()
    assert lines[1:] == ["1 1 011", "2 2 111", "1 2 000"]


def test_round_trip_generated(tmp_path):
    model = HeisenbergModel(4)
    ds = generate_dataset(model, draw_target(4, 0).to_theta(), protocol_times(3), (4, 2), 7)
    write_dataset(ds, tmp_path / "d.txt")
    back = read_dataset(tmp_path / "d.txt")
    assert back == ds
    np.testing.assert_array_equal(back.theta_star, ds.theta_star)


def _corrupt(tmp_path, fn):
    write_dataset(small_dataset(), tmp_path / "d.txt")
    lines = (tmp_path / "d.txt").read_text().splitlines()
    fn(lines)
    (tmp_path / "bad.txt").write_text("\n".join(lines) + "\n")
    return tmp_path / "bad.txt"


def test_unknown_basis_letter(tmp_path):
    path = _corrupt(tmp_path, lambda ls: ls.__setitem__(0, ls[0].replace('"XYZ"', '"XWZ"')))
    with pytest.raises(ParseError, match="line 1") as exc:
        read_dataset(path)
    assert exc.value.lineno == 1


@pytest.mark.parametrize("line,bad", [(2, "1 1 01"), (3, "3 1 000"), (4, "1 1 0a1"), (2, "1 x 011"), (3, "1 1")])
def test_bad_records_name_line(tmp_path, line, bad):
    path = _corrupt(tmp_path, lambda ls: ls.__setitem__(line - 1, bad))
    with pytest.raises(ParseError) as exc:
        read_dataset(path)
    assert exc.value.lineno == line
    assert f"line {line}" in str(exc.value)


def test_malformed_header(tmp_path):
    path = _corrupt(tmp_path, lambda ls: ls.__setitem__(0, "{not json"))
    with pytest.raises(ParseError, match="line 1"):
        read_dataset(path)


def test_large_file_reads_fast(tmp_path):
    model = HeisenbergModel(6)
    ds = generate_dataset(model, draw_target(6, 0).to_theta(), [0.2], (10, 1), 10_000)
    write_dataset(ds, tmp_path / "big.txt")
    t0 = time.perf_counter()
    back = read_dataset(tmp_path / "big.txt")
    assert time.perf_counter() - t0 < 5.0
    assert back.d == 100_000
