import numpy as np
import pytest

from droopstab.modal import (
    DegenerateModeError,
    balanced_norm,
    eig_full,
    eigvec_derivative,
    fd_eigen_derivatives,
    first_order_sensitivity,
    margins,
    match_eigenvalues,
    second_order_sensitivity,
    sensitivity_bundle,
)


def random_affine(rng, N=12, nd=2):
    A0 = rng.normal(size=(N, N)) - 2.0 * np.eye(N)
    M = [0.3 * rng.normal(size=(N, N)) for _ in range(nd)]
    return A0, M


def test_eig_full_conventions(rng):
    A0, _ = random_affine(rng)
    sol = eig_full(A0)
    assert sol.residual(A0) < 1e-12
    assert sol.biorthogonality() < 1e-10
    np.testing.assert_allclose(np.linalg.norm(sol.W, axis=0), 1.0)
    # sorted by real part, ties by imaginary part
    assert np.all(np.diff(sol.values.real) >= -1e-12)
    for i, p in enumerate(sol.partner):
        if p >= 0:
            assert sol.values[p] == pytest.approx(np.conj(sol.values[i]))
            assert sol.partner[p] == i
        else:
            assert abs(sol.values[i].imag) < 1e-10


def test_eig_full_with_state_scaling(rng):
    A0, _ = random_affine(rng)
    D = np.diag(10.0 ** rng.uniform(-4, 4, A0.shape[0]))
    A = D @ A0 @ np.linalg.inv(D)
    plain = eig_full(A)
    scaled = eig_full(A, scale=np.diag(D))
    np.testing.assert_allclose(scaled.values, plain.values, rtol=1e-8, atol=1e-8)
    assert scaled.biorthogonality() < 1e-8


def test_balanced_norm_ignores_state_units(rng):
    A0, _ = random_affine(rng)
    D = np.diag(10.0 ** rng.uniform(-5, 5, A0.shape[0]))
    A = D @ A0 @ np.linalg.inv(D)
    assert np.linalg.norm(A, 2) > 1e3 * np.linalg.norm(A0, 2)
    assert balanced_norm(A) < 4 * np.linalg.norm(A0, 2)
    assert balanced_norm(A) <= np.linalg.norm(A, 2) * (1 + 1e-12)


def test_eig_full_rejects_bad_input():
    with pytest.raises(ValueError):
        eig_full(np.ones((3, 4)))
    with pytest.raises(ValueError):
        eig_full(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_margins():
    assert np.allclose(margins(np.array([-1 + 2j, 0.5])), [1.0, -0.5])


def test_first_order_matches_finite_differences(rng):
    A0, M = random_affine(rng)
    k0 = np.array([0.4, -0.2])
    A_of_k = lambda k: A0 + sum(kj * Mj for kj, Mj in zip(k, M))  # noqa: E731
    sol = eig_full(A_of_k(k0))
    first = first_order_sensitivity(sol, M)
    second = second_order_sensitivity(sol, M)
    for j in range(2):
        d1, d2, _ = fd_eigen_derivatives(A_of_k, k0, j, step=1e-4, values0=sol.values)
        np.testing.assert_allclose(first[:, j], d1, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(second[:, j, j], d2, rtol=1e-3, atol=1e-4)


def test_second_order_symmetric_and_conjugate(rng):
    A0, M = random_affine(rng, nd=3)
    b = sensitivity_bundle(A0, M, ("a", "b", "c"), np.zeros(3))
    np.testing.assert_allclose(b.second, np.swapaxes(b.second, 1, 2), atol=1e-12)
    p = b.solution.partner
    for i in np.flatnonzero(p >= 0):
        np.testing.assert_allclose(b.first[p[i]], np.conj(b.first[i]), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(b.second[p[i]], np.conj(b.second[i]), rtol=1e-7, atol=1e-10)


def test_mixed_second_derivative(rng):
    A0, M = random_affine(rng)
    A_of_k = lambda k: A0 + k[0] * M[0] + k[1] * M[1]  # noqa: E731
    sol = eig_full(A0)
    second = second_order_sensitivity(sol, M)
    h = 1e-4
    lam = {}
    for s0 in (-1, 1):
        for s1 in (-1, 1):
            v = np.linalg.eigvals(A_of_k([s0 * h, s1 * h]))
            lam[s0, s1] = v[match_eigenvalues(sol.values, v)]
    fd = (lam[1, 1] - lam[1, -1] - lam[-1, 1] + lam[-1, -1]) / (4 * h * h)
    np.testing.assert_allclose(second[:, 0, 1], fd, rtol=1e-3, atol=1e-4)


def test_degenerate_modes_excluded():
    # a repeated eigenvalue in a non-trivial Jordan-free block
    A = np.diag([-1.0, -1.0, -2.0, -3.0])
    A[0, 2] = 0.5
    M = [np.eye(4) * 0.1 + np.diag([0.0, 0.0, 0.2], 1)]
    b = sensitivity_bundle(A, M, ("k",), [0.0])
    double = np.flatnonzero(np.isclose(b.solution.values, -1.0))
    simple = np.flatnonzero(~np.isclose(b.solution.values, -1.0))
    assert set(b.excluded) == set(double.tolist())
    assert np.all(np.isnan(b.first[double]))
    assert not np.any(np.isnan(b.first[simple]))
    assert not np.any(np.isnan(b.second[simple]))
    with pytest.raises(DegenerateModeError, match="clustered"):
        eigvec_derivative(b.solution, M[0], double[0])


def test_eigvec_derivative_matches_finite_difference(rng):
    A0, M = random_affine(rng, N=6, nd=1)
    sol = eig_full(A0)
    i = 2
    dw = eigvec_derivative(sol, M[0], i)
    h = 1e-6
    lam, V = np.linalg.eig(A0 + h * M[0])
    j = np.argmin(np.abs(lam - sol.values[i]))
    w = V[:, j]
    # same normalization as the modal expansion: no component along w_i
    w = w / (sol.Z[:, i] @ w)
    fd = (w - sol.W[:, i] / (sol.Z[:, i] @ sol.W[:, i])) / h
    np.testing.assert_allclose(dw, fd, rtol=1e-4, atol=1e-4 * np.abs(dw).max())


def test_match_eigenvalues_permutation(rng):
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    perm = rng.permutation(8)
    p = match_eigenvalues(v, v[perm] + 1e-9)
    np.testing.assert_allclose(v[perm][p], v + 1e-9)
