import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy import integrate, special
from scipy.stats import unitary_group

from commdecay import opcore as oc


def random_hermitian(n, rng):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def cyclic_shift(n):
    return np.roll(np.eye(n), 1, axis=0)


# constructors


def test_make_dense_identity_unitary():
    op = oc.make_dense(np.eye(2), unitary=True)
    assert op.unitary and op.dim == 2


def test_make_dense_pauli_x_flags():
    op = oc.make_dense([[0, 1], [1, 0]], hermitian=True, unitary=True)
    assert op.hermitian and op.unitary


def test_make_dense_nilpotent_not_unitary():
    with pytest.raises(oc.FlagError):
        oc.make_dense([[0, 1], [0, 0]], unitary=True)


def test_make_dense_rejects_non_square():
    with pytest.raises(ValueError):
        oc.make_dense(np.zeros((2, 3)))


def test_make_dense_rejects_false_hermitian_flag():
    with pytest.raises(oc.FlagError):
        oc.make_dense([[0, 1], [2, 0]], hermitian=True)


def test_fourier_symbol_one_is_identity():
    op = oc.make_fourier_diagonal(np.ones(16), hermitian=True, unitary=True)
    v = np.random.default_rng(0).standard_normal(16)
    assert np.allclose(op.apply(v), v, atol=1e-14)


def test_fourier_fractional_symbol_matches_circulant_laplacian():
    n, s = 8, 1.0
    k = np.arange(n)
    op = oc.make_fourier_diagonal((2 * np.sin(np.pi * k / n)) ** s, hermitian=True)
    lap = 2 * np.eye(n) - cyclic_shift(n) - cyclic_shift(n).T
    lam = np.linalg.eigvalsh(lap)
    expected = np.sort(np.sqrt(np.clip(lam, 0, None)) ** s)
    assert np.allclose(np.sort(oc.eig(op).eigenvalues), expected, atol=1e-12)
    # densified operator equals the square root of the Laplacian
    dense = op.to_dense()
    assert np.allclose(dense @ dense, lap, atol=1e-12)


def test_fourier_shift_symbol_moves_delta():
    n = 12
    op = oc.make_fourier_diagonal(np.exp(-2j * np.pi * np.arange(n) / n), unitary=True)
    out = op.apply(np.eye(n)[0])
    assert np.allclose(out, cyclic_shift(n) @ np.eye(n)[0], atol=1e-14)
    assert abs(out[1] - 1) < 1e-14


def test_fourier_unitary_flag_checked():
    with pytest.raises(oc.FlagError):
        oc.make_fourier_diagonal(np.array([1.0, 2.0]), unitary=True)


def test_fourier_two_dimensional_grid_matches_kron():
    n = 6
    kx = 2 * np.pi * np.fft.fftfreq(n)
    sym = kx[:, None] ** 2 - kx[None, :] ** 2
    op = oc.make_fourier_diagonal(sym, hermitian=True, grid=(n, n))
    d1 = oc.make_fourier_diagonal(kx ** 2, hermitian=True).to_dense()
    expected = np.kron(d1, np.eye(n)) - np.kron(np.eye(n), d1)
    assert np.allclose(op.to_dense(), expected, atol=1e-12)


def test_fourier_block_symbol_matches_dense():
    n = 8
    rng = np.random.default_rng(1)
    blocks = rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2))
    op = oc.make_fourier_diagonal(blocks)
    f = np.fft.fft(np.eye(n), axis=0)  # f[k, x] = exp(-2 pi i k x / n)
    finv = np.linalg.inv(f)
    expected = np.zeros((2 * n, 2 * n), dtype=complex)
    for a in range(2):
        for b in range(2):
            expected[a::2, b::2] = finv @ np.diag(blocks[:, a, b]) @ f
    assert np.allclose(op.to_dense(), expected, atol=1e-12)


# algebra


def test_algebra_matches_dense_arithmetic():
    rng = np.random.default_rng(2)
    n = 10
    a = oc.make_dense(rng.standard_normal((n, n)))
    d = oc.make_diagonal(rng.standard_normal(n))
    f = oc.make_fourier_diagonal(rng.standard_normal(n))
    s = oc.make_sparse(sp.random(n, n, density=0.3, random_state=3))
    expr = a @ d - 2.0 * (f @ s) + s @ f @ d + d.adjoint() @ f.adjoint()
    dense = (a.to_dense() @ d.to_dense() - 2 * f.to_dense() @ s.to_dense()
             + s.to_dense() @ f.to_dense() @ d.to_dense()
             + d.to_dense().conj().T @ f.to_dense().conj().T)
    assert np.allclose(expr.to_dense(), dense, atol=1e-12)
    assert np.allclose(expr.adjoint().to_dense(), dense.conj().T, atol=1e-12)


def test_composition_keeps_fast_representations():
    d1 = oc.make_diagonal(np.arange(4.0))
    d2 = oc.make_diagonal(np.ones(4))
    assert (d1 @ d2).representation == "diagonal"
    f1 = oc.make_fourier_diagonal(np.arange(4.0))
    assert (f1 @ f1).representation == "fourier_diagonal"
    assert (d1 @ f1).representation == "composite"


def test_fourier_operators_commute():
    rng = np.random.default_rng(3)
    f1 = oc.make_fourier_diagonal(rng.standard_normal(9))
    f2 = oc.make_fourier_diagonal(rng.standard_normal(9) + 1j * rng.standard_normal(9))
    c = oc.commutator(f1, f2)
    assert np.max(np.abs(c.to_dense())) < 1e-13


def test_op_norm_power_iteration_matches_exact():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((60, 60))
    op = oc.make_dense(m) @ oc.make_diagonal(np.ones(60))
    exact = np.linalg.norm(m, 2)
    assert oc.op_norm(op) == pytest.approx(exact, rel=1e-12)
    assert oc.op_norm(op, cap=10, iterations=2000) == pytest.approx(exact, rel=1e-6)


# eigendecomposition


def test_eig_diagonal_permutation_vectors():
    spec = oc.eig(oc.make_dense(np.diag([3.0, 1.0, 2.0]), hermitian=True))
    assert np.allclose(spec.eigenvalues, [1, 2, 3])
    assert np.allclose(np.abs(spec.eigenvectors), np.eye(3)[:, [1, 2, 0]])


def test_eig_diagonal_representation():
    spec = oc.eig(oc.make_diagonal([3.0, 1.0, 2.0], hermitian=True))
    assert np.allclose(spec.eigenvalues, [1, 2, 3])
    assert np.allclose(spec.eigenvectors, np.eye(3)[:, [1, 2, 0]])


def test_eig_pauli_x():
    spec = oc.eig(oc.make_dense([[0, 1], [1, 0]], hermitian=True, unitary=True))
    assert np.allclose(spec.eigenvalues, [-1, 1])
    v = spec.eigenvectors
    assert abs(abs(np.vdot(v[:, 0], [1, -1])) / np.sqrt(2) - 1) < 1e-12
    assert abs(abs(np.vdot(v[:, 1], [1, 1])) / np.sqrt(2) - 1) < 1e-12


def test_eig_cyclic_shift_256():
    n = 256
    spec = oc.eig(oc.make_dense(cyclic_shift(n), unitary=True))
    expected = np.exp(2j * np.pi * np.arange(n) / n)
    expected = expected[np.argsort(np.angle(expected))]
    assert np.allclose(spec.eigenvalues, expected, atol=1e-10)
    assert np.all(np.diff(np.angle(spec.eigenvalues)) > 0)


def test_eig_rejects_unflagged():
    with pytest.raises(ValueError):
        oc.eig(oc.make_dense(np.eye(3)))


def test_eig_rejects_non_normal_unitary_claim():
    m = np.array([[1.0, 1.0], [0.0, 1.0]])
    op = oc.Operator(2, "dense", m, unitary=True)
    with pytest.raises(ValueError):
        oc.eig(op)


def test_tridiagonal_route_matches_dense_route():
    n = 200
    rng = np.random.default_rng(5)
    d, e = rng.standard_normal(n), rng.standard_normal(n - 1)
    m = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    s1 = oc.eig(oc.make_sparse(sp.csr_matrix(m), hermitian=True))
    perm = rng.permutation(n)
    # a permuted copy is no longer tridiagonal, so it takes the dense route
    s2 = oc.eig(oc.make_dense(m[np.ix_(perm, perm)], hermitian=True))
    assert np.allclose(s1.eigenvalues, np.linalg.eigvalsh(m), atol=1e-11)
    assert np.allclose(s2.eigenvalues, s1.eigenvalues, atol=1e-11)


def test_fourier_spectral_data_round_trip():
    n = 16
    sym = np.cos(2 * np.pi * np.arange(n) / n)
    op = oc.make_fourier_diagonal(sym, hermitian=True)
    spec = oc.eig(op)
    v = np.random.default_rng(6).standard_normal(n) + 0j
    assert np.allclose(spec.from_eig(spec.to_eig(v)), v, atol=1e-13)
    rec = spec.eigenvectors @ np.diag(spec.eigenvalues) @ spec.eigenvectors.conj().T
    assert np.allclose(rec, op.to_dense(), atol=1e-12)


def test_clusters_partition_and_wrap():
    spec = oc.SpectralData(np.exp(1j * np.array([-np.pi + 1e-10, -1.0, 0.0, 0.0, np.pi])),
                           "unitary", "identity", perm=np.arange(5))
    groups = spec.clusters()
    assert sorted(np.concatenate(groups).tolist()) == list(range(5))
    assert len(groups) == 3


# functional calculus and evolution


def test_func_calculus_identity_reconstructs():
    rng = np.random.default_rng(7)
    m = random_hermitian(30, rng)
    spec = oc.eig(oc.make_dense(m, hermitian=True))
    rec = oc.func_calculus(spec, lambda x: x).to_dense()
    assert np.linalg.norm(rec - m, 2) <= 1e-9 * np.linalg.norm(m, 2)


def test_func_calculus_g_on_three_levels():
    spec = oc.eig(oc.make_diagonal([-1.0, 0.0, 1.0], hermitian=True))
    g = oc.func_calculus(spec, lambda x: x / (1 + x ** 2))
    assert np.allclose(np.sort(g.data.real), [-0.5, 0.0, 0.5])


def test_func_calculus_exponential_of_pauli_x():
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    spec = oc.eig(oc.make_dense(x, hermitian=True))
    u = oc.func_calculus(spec, lambda lam: np.exp(-1j * np.pi * lam)).to_dense()
    oracle = np.cos(np.pi) * np.eye(2) - 1j * np.sin(np.pi) * x
    assert np.allclose(u, oracle, atol=1e-12)
    assert np.allclose(u, -np.eye(2), atol=1e-12)


def test_func_calculus_rejects_non_finite():
    spec = oc.eig(oc.make_diagonal([0.0, 1.0], hermitian=True))
    with np.errstate(divide="ignore"):
        with pytest.raises(ValueError):
            oc.func_calculus(spec, lambda x: 1 / x)


def test_func_calculus_fourier_is_symbol_map():
    n = 32
    sym = np.abs(2 * np.pi * np.fft.fftfreq(n))
    op = oc.make_fourier_diagonal(sym, hermitian=True)
    g = oc.func_calculus(oc.eig(op), lambda x: x / (1 + x ** 2))
    assert g.representation == "fourier_diagonal"
    assert np.array_equal(g.data, sym / (1 + sym ** 2))


def test_evolve_time_zero():
    spec = oc.eig(oc.make_diagonal([1.0, 2.0], hermitian=True))
    v = oc.StateVector([0.6, 0.8j])
    assert np.allclose(oc.evolve(spec, 0.0, v).entries, v.entries)


def test_evolve_two_level():
    spec = oc.eig(oc.make_dense(np.diag([1.0, 2.0]), hermitian=True))
    out = oc.evolve(spec, np.pi, oc.StateVector([1.0, 0.0]))
    assert np.allclose(out.entries, [np.exp(-1j * np.pi), 0], atol=1e-14)


def test_evolve_dimension_mismatch():
    spec = oc.eig(oc.make_diagonal([1.0, 2.0], hermitian=True))
    with pytest.raises(ValueError):
        oc.evolve(spec, 1.0, oc.StateVector([1.0, 0.0, 0.0]))


def semicircle_transform(t):
    # independent quadrature of the semicircle law's Fourier transform
    w = lambda lam: (2 / np.pi) * np.sqrt(1 - lam ** 2)
    re = integrate.quad(w, -1, 1, weight="cos", wvar=t, limit=200)[0]
    im = -integrate.quad(w, -1, 1, weight="sin", wvar=t, limit=200)[0]
    return re + 1j * im


def test_semicircle_evolution_of_vacuum():
    n = 4096
    s = sp.diags(np.ones(n - 1), -1)
    h = oc.make_sparse((s + s.T) / 2, hermitian=True)
    spec = oc.eig(h)
    v0 = np.zeros(n)
    v0[0] = 1.0
    c0 = spec.to_eig(v0)
    for t in [0.5, 1.0, 3.7, 10.0, 25.0, 49.0, 50.0]:
        amp = np.vdot(c0, np.exp(-1j * t * spec.eigenvalues) * c0)
        assert abs(amp - semicircle_transform(t)) < 1e-6
        assert abs(amp - 2 * special.j1(t) / t) < 1e-6


# properties


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**31 - 1))
def test_unitary_application_preserves_norm(n, seed):
    u = unitary_group.rvs(n, random_state=seed)
    op = oc.make_dense(u, unitary=True)
    v = np.random.default_rng(seed).standard_normal(n)
    assert abs(np.linalg.norm(op.apply(v)) - np.linalg.norm(v)) <= 1e-10 * np.linalg.norm(v)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 60), seed=st.integers(0, 2**31 - 1), degenerate=st.booleans())
def test_spectral_data_invariants_hermitian(n, seed, degenerate):
    rng = np.random.default_rng(seed)
    if degenerate:
        q = unitary_group.rvs(n, random_state=seed)
        lam = rng.integers(-2, 3, n).astype(float)
        m = (q * lam) @ q.conj().T
        m = (m + m.conj().T) / 2
    else:
        m = random_hermitian(n, rng)
    spec = oc.eig(oc.make_dense(m, hermitian=True))
    v = spec.eigenvectors
    assert np.linalg.norm(v.conj().T @ v - np.eye(n), 2) <= 1e-10
    rec = (v * spec.eigenvalues) @ v.conj().T
    assert np.linalg.norm(rec - m, 2) <= 1e-9 * max(np.linalg.norm(m, 2), 1e-300)
    groups = spec.clusters()
    assert sorted(np.concatenate(groups).tolist()) == list(range(n))
    for g in groups:
        assert np.ptp(spec.eigenvalues[g]) <= spec.cluster_tolerance * len(g)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 60), seed=st.integers(0, 2**31 - 1), degenerate=st.booleans())
def test_spectral_data_invariants_unitary(n, seed, degenerate):
    q = unitary_group.rvs(n, random_state=seed)
    if degenerate:
        phases = np.exp(2j * np.pi * np.random.default_rng(seed).integers(0, 4, n) / 4)
        u = (q * phases) @ q.conj().T
    else:
        u = q
    spec = oc.eig(oc.make_dense(u, unitary=True))
    v = spec.eigenvectors
    assert np.allclose(np.abs(spec.eigenvalues), 1, atol=1e-12)
    assert np.linalg.norm(v.conj().T @ v - np.eye(n), 2) <= 1e-10
    rec = (v * spec.eigenvalues) @ v.conj().T
    assert np.linalg.norm(rec - u, 2) <= 1e-9
    assert np.all(np.diff(np.angle(spec.eigenvalues)) >= 0)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 64), seed=st.integers(0, 2**31 - 1))
def test_func_calculus_homomorphism(n, seed):
    m = random_hermitian(n, np.random.default_rng(seed))
    spec = oc.eig(oc.make_dense(m, hermitian=True))
    f = lambda x: np.exp(-1j * x) / (1 + x ** 2)
    g = lambda x: x ** 3 - 2 * x
    lhs = oc.func_calculus(spec, lambda x: f(x) * g(x)).to_dense()
    rhs = oc.func_calculus(spec, f).to_dense() @ oc.func_calculus(spec, g).to_dense()
    assert np.linalg.norm(lhs - rhs, 2) <= 1e-9 * max(1.0, np.linalg.norm(lhs, 2))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 64), seed=st.integers(0, 2**31 - 1))
def test_fourier_dense_agreement(n, seed):
    rng = np.random.default_rng(seed)
    sym = rng.standard_normal(n)
    op = oc.make_fourier_diagonal(sym, hermitian=True)
    dense = oc.make_dense(op.to_dense(), hermitian=True)
    assert np.allclose(oc.eig(dense).eigenvalues, np.sort(sym), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**31 - 1),
       s=st.floats(-20, 20), t=st.floats(-20, 20))
def test_evolution_group_law(n, seed, s, t):
    rng = np.random.default_rng(seed)
    spec = oc.eig(oc.make_dense(random_hermitian(n, rng), hermitian=True))
    v = oc.StateVector(rng.standard_normal(n) + 1j * rng.standard_normal(n)).normalized()
    two_step = oc.evolve(spec, s, oc.evolve(spec, t, v))
    one_step = oc.evolve(spec, s + t, v)
    assert np.linalg.norm(two_step.entries - one_step.entries) <= 1e-9
    assert abs(one_step.norm() - 1) <= 1e-10


# serialization


@pytest.mark.parametrize("builder", [
    lambda r: oc.make_dense(r.standard_normal((5, 5)) + 1j * r.standard_normal((5, 5))),
    lambda r: oc.make_diagonal(r.standard_normal(7), hermitian=True),
    lambda r: oc.make_fourier_diagonal(np.exp(1j * r.standard_normal(8)), unitary=True),
    lambda r: oc.make_fourier_diagonal(r.standard_normal((4, 3)), grid=(4, 3)),
    lambda r: oc.make_sparse(sp.random(6, 6, density=0.4, random_state=1)),
])
def test_json_round_trip_is_bit_stable(builder):
    op = builder(np.random.default_rng(8))
    back = oc.loads(oc.dumps(op))
    assert back.representation == op.representation
    assert back.hermitian == op.hermitian and back.unitary == op.unitary
    a, b = op.to_dense(), back.to_dense()
    assert np.array_equal(a.view(np.float64), b.view(np.float64))
    assert oc.dumps(back) == oc.dumps(op)


def test_vector_json_round_trip():
    v = oc.StateVector(np.random.default_rng(9).standard_normal(11) * (1 + 1e-3j), "chi")
    back = oc.loads(oc.dumps(v))
    assert back.label == "chi"
    assert np.array_equal(back.entries, v.entries)
