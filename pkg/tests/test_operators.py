import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collmon.operators import (
    CompositeSpace,
    Superoperator,
    as_operator,
    choi_matrix,
    choi_negativity,
    is_hermitian,
    is_positive_semidefinite,
    is_unitary,
    partial_trace_env,
    positive_sqrt,
    tensor_product,
    trace_preservation_residual,
    unvec,
    vec,
)
from collmon.monitoring import random_unitary

from conftest import random_hermitian, random_psd


def test_as_operator_rejects_non_square():
    with pytest.raises(ValueError):
        as_operator(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        as_operator(np.eye(2), dim=3)


def test_predicates_use_default_tolerance():
    a = np.eye(2) + 1e-11 * np.array([[0, 1], [0, 0]])
    assert is_hermitian(a)
    assert not is_hermitian(np.eye(2) + 1e-9 * np.array([[0, 1], [0, 0]]))
    assert is_positive_semidefinite(np.diag([1.0, -5e-11]))
    assert not is_positive_semidefinite(np.diag([1.0, -1e-9]))
    assert is_unitary(np.array([[0, 1], [1, 0]]))


def test_composite_space_dim():
    assert CompositeSpace(3, 4).dim == 12
    with pytest.raises(ValueError):
        CompositeSpace(0, 2)


def test_tensor_product_identities():
    assert np.array_equal(tensor_product(np.eye(2), np.eye(3)), np.eye(6))
    assert np.array_equal(tensor_product(np.diag([1, 0]), np.diag([0, 1])), np.diag([0, 1, 0, 0]))


def test_tensor_product_trace(rng):
    a, b = random_hermitian(rng, 3), rng.normal(size=(4, 4))
    expected = sum(a[i, i] * b[j, j] for i in range(3) for j in range(4))
    assert abs(np.trace(tensor_product(a, b)) - expected) < 1e-12


def test_partial_trace_product_state(rng):
    rho = random_psd(rng, 3)
    env = random_psd(rng, 2)
    env /= np.trace(env)
    assert np.max(np.abs(partial_trace_env(np.kron(rho, env), CompositeSpace(3, 2)) - rho)) < 1e-12


def test_partial_trace_bell_state():
    bell = np.array([1, 0, 0, 1]) / np.sqrt(2)
    proj = np.outer(bell, bell)
    # explicit sum over the environment index
    oracle = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            oracle[a, b] = sum(proj[2 * a + j, 2 * b + j] for j in range(2))
    out = partial_trace_env(proj, CompositeSpace(2, 2))
    assert np.allclose(out, oracle, atol=1e-15)
    assert np.allclose(out, np.eye(2) / 2, atol=1e-15)


def test_partial_trace_of_tensor_product(rng):
    for _ in range(20):
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        b = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        out = partial_trace_env(tensor_product(a, b), CompositeSpace(3, 2))
        assert np.max(np.abs(out - a * np.trace(b))) < 1e-12


def test_partial_trace_linear(rng):
    space = CompositeSpace(2, 3)
    x = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    y = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    lhs = partial_trace_env(2 * x - 3j * y, space)
    rhs = 2 * partial_trace_env(x, space) - 3j * partial_trace_env(y, space)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_partial_trace_shape_check():
    with pytest.raises(ValueError):
        partial_trace_env(np.eye(5), CompositeSpace(2, 2))


def test_positive_sqrt_cases(rng):
    assert np.allclose(positive_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(positive_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    g = random_psd(rng, 5)
    r = positive_sqrt(g)
    assert np.max(np.abs(r @ r - g)) < 1e-10


def test_positive_sqrt_of_square(rng):
    for _ in range(10):
        r = random_psd(rng, 4)
        s = positive_sqrt(r @ r)
        assert np.max(np.abs(s @ s - r @ r)) < 1e-9 * np.linalg.norm(r @ r)
        assert np.max(np.abs(s - r)) < 1e-9 * np.linalg.norm(r)


def test_positive_sqrt_clips_noise_and_rejects_negative():
    r = positive_sqrt(np.diag([1.0, -5e-11]))
    assert np.allclose(r, np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        positive_sqrt(np.diag([1.0, -1e-3]))


def test_vec_convention(rng):
    a, x, b = (rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(vec(a @ x @ b), np.kron(b.T, a) @ vec(x))
    assert np.array_equal(unvec(vec(x), 3), x)


def test_superoperator_linearity(rng):
    m = Superoperator(rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9)))
    x, y = random_hermitian(rng, 3), random_hermitian(rng, 3)
    assert np.max(np.abs(m(2 * x + 1j * y) - 2 * m(x) - 1j * m(y))) < 1e-12


def test_superoperator_from_map_matches_kraus(rng):
    k = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    a = Superoperator.from_map(lambda x: k @ x @ k.conj().T, 3)
    b = Superoperator.from_kraus([k])
    assert np.allclose(a.matrix, b.matrix, atol=1e-13)


def test_choi_identity_channel():
    d = 3
    c = choi_matrix(Superoperator.identity(d))
    omega = vec(np.eye(d))  # sum_i |ii>
    assert np.allclose(c, np.outer(omega, omega))
    w = np.linalg.eigvalsh(c)
    assert abs(w[-1] - d) < 1e-12 and np.all(np.abs(w[:-1]) < 1e-12)


def test_choi_transpose_map():
    t = Superoperator.from_map(lambda x: x.T, 2)
    w = np.linalg.eigvalsh(choi_matrix(t))
    assert abs(w[0] + 1.0) < 1e-12
    assert abs(choi_negativity(t) - 1.0) < 1e-12


def test_choi_single_kraus_rank_one(rng):
    k = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    w = np.linalg.eigvalsh(choi_matrix(Superoperator.from_kraus([k])))
    assert w[0] > -1e-12
    assert np.sum(w > 1e-10 * w[-1]) == 1


def _random_cptp_kraus(rng, d, r):
    v = random_unitary(rng, d * r)[:, :d]  # isometry
    return [v[i * d:(i + 1) * d] for i in range(r)]


def test_trace_preservation_detection(rng):
    for _ in range(100):
        d = int(rng.integers(2, 4))
        ks = _random_cptp_kraus(rng, d, int(rng.integers(1, 4)))
        m = Superoperator.from_kraus(ks)
        assert trace_preservation_residual(m) < 1e-12
        assert choi_negativity(m) < 1e-12
        assert trace_preservation_residual(Superoperator.from_kraus([1.1 * k for k in ks])) > 0.1


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_partial_trace_factorizes(ds, de, seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(ds, ds))
    b = r.normal(size=(de, de))
    out = partial_trace_env(np.kron(a, b), CompositeSpace(ds, de))
    assert np.allclose(out, a * np.trace(b), atol=1e-12)
