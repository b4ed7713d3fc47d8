import numpy as np
import pytest

from dkrc.errors import DimensionError, NumericError
from dkrc.koopman import (RBF, EncoderDictionary, IdentificationReport, LinearLiftedSystem, Monomials, UnitBasis,
                          controllability, dmd_koopman, edmd_koopman, fit_lifted_lti, heuristics,
                          koopman_spectrum, lift, matrix_rank)
from dkrc.neuralnet import build_ae


def invariant_subspace_data(M=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (2, M))
    Y = np.vstack([0.9 * X[0], 0.5 * X[1] + (0.81 - 0.5) * X[0] ** 2])
    return X, Y


SQUARES = Monomials(2, exponents=[(1, 0), (0, 1), (2, 0)])


def stable_matrix(rng, n, radius=0.95):
    A = rng.standard_normal((n, n))
    return radius * A / max(abs(np.linalg.eigvals(A)))


def gram_schmidt_rank(Q, tol=1e-9):
    """Column-space growth: count columns with a non-negligible component orthogonal to the ones kept."""
    basis = []
    scale = max(np.linalg.norm(Q), 1.0)
    for col in Q.T:
        v = col.astype(float).copy()
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        if np.linalg.norm(v) > tol * scale:
            basis.append(v / np.linalg.norm(v))
    return len(basis)


# -- dictionaries ----------------------------------------------------------------

def test_unit_basis_is_identity():
    X = np.random.default_rng(0).standard_normal((3, 7))
    np.testing.assert_array_equal(lift(UnitBasis(3), X), X)


def test_monomials_graded_lex():
    np.testing.assert_array_equal(Monomials(2, max_degree=2).lift(np.array([[2.0], [3.0]]))[:, 0],
                                  [1, 2, 3, 4, 6, 9])


def test_rbf_dictionary():
    centers = np.array([[0.0, 0.0], [1.0, 0.0]])  # one center per row
    out = RBF(centers, 1.0).lift(np.array([[0.0], [0.0]]))[:, 0]
    np.testing.assert_allclose(out, [1.0, np.exp(-0.5)])


def test_encoder_dictionary_delegates_to_network():
    net = build_ae(2, 4, seed=3)
    mean, std = np.array([0.5, -1.0]), np.array([2.0, 0.5])
    X = np.random.default_rng(1).standard_normal((2, 9))
    d = EncoderDictionary(net, mean, std)
    np.testing.assert_allclose(d.lift(X), net.encode(((X - mean[:, None]) / std[:, None]).T).T)
    with pytest.raises(DimensionError):
        d.lift(np.zeros((3, 2)))


def test_encoder_dictionary_uses_context_for_missing_latents():
    net = build_ae(3, 4)
    d = EncoderDictionary(net, np.zeros(3), np.ones(3), state_dim=2, context_fn=lambda x: np.array([x.sum()]))
    X = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_allclose(d.lift(X), d.lift(np.vstack([X, X.sum(axis=0)])))


# -- EDMD / DMD -------------------------------------------------------------------

def test_edmd_recovers_diagonal_system():
    X = np.random.default_rng(2).standard_normal((2, 50))
    K = edmd_koopman(X, np.diag([0.9, 0.5]) @ X, UnitBasis(2))
    np.testing.assert_allclose(K.K, np.diag([0.9, 0.5]), atol=1e-8)
    assert K.method == "edmd"


def test_edmd_invariant_subspace_is_exact():
    X, Y = invariant_subspace_data()
    K = edmd_koopman(X, Y, SQUARES)
    assert K.residual < 1e-8
    lam = np.sort(np.linalg.eigvals(K.K).real)
    np.testing.assert_allclose(lam, [0.5, 0.81, 0.9], atol=1e-6)
    # analytic coefficient matrix: psi(y) = forward @ psi(x)
    forward = np.array([[0.9, 0, 0], [0, 0.5, 0.31], [0, 0, 0.81]])
    np.testing.assert_allclose(K.forward, forward, atol=1e-10)


def test_edmd_identity_map():
    X = np.random.default_rng(3).uniform(-1, 1, (2, 80))
    K = edmd_koopman(X, X, Monomials(2, max_degree=2))
    np.testing.assert_allclose(K.K, np.eye(6), atol=1e-10)


def test_dmd_recovers_known_matrix():
    rng = np.random.default_rng(4)
    A = stable_matrix(rng, 4)
    X = rng.standard_normal((4, 60))
    np.testing.assert_allclose(dmd_koopman(X, A @ X).K, A, atol=1e-8)


def test_dmd_identity_and_rank_one():
    X = np.random.default_rng(5).standard_normal((4, 3))
    K = dmd_koopman(X, X).K
    np.testing.assert_allclose(K @ X, X, atol=1e-12)
    x, y = np.array([[1.0], [2.0]]), np.array([[3.0], [-1.0]])
    np.testing.assert_allclose(dmd_koopman(x, y).K, y @ x.T / 5.0, atol=1e-14)


def test_edmd_and_dmd_agree_on_unit_basis():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((3, 40))
    Y = stable_matrix(rng, 3) @ X + 0.01 * rng.standard_normal((3, 40))
    np.testing.assert_allclose(edmd_koopman(X, Y).forward, dmd_koopman(X, Y).K, atol=1e-8)


def test_non_finite_lift_raises():
    X = np.array([[np.nan, 1.0]])
    with pytest.raises(NumericError):
        edmd_koopman(X, X)
    with pytest.raises(NumericError):
        dmd_koopman(X, X)


def test_singular_gram_is_flagged_not_fatal():
    X = np.vstack([np.ones(10), np.arange(10.0)])
    K = edmd_koopman(X, X, Monomials(2, exponents=[(0, 0), (1, 0), (0, 1)]))
    assert K.warnings and np.all(np.isfinite(K.K))


# -- spectrum ---------------------------------------------------------------------

def test_spectrum_of_diagonal():
    s = koopman_spectrum(np.diag([0.5, 0.9]))
    np.testing.assert_allclose(s.eigenvalues, [0.9, 0.5])
    np.testing.assert_allclose(np.abs(s.eigenvectors), [[0, 1], [1, 0]])


def test_spectrum_of_invariant_subspace_is_sorted():
    X, Y = invariant_subspace_data()
    K = edmd_koopman(X, Y, SQUARES)
    s = koopman_spectrum(K)
    np.testing.assert_allclose(s.eigenvalues.real, [0.9, 0.81, 0.5], atol=1e-6)
    resid = np.linalg.norm(K.K @ s.eigenvectors - s.eigenvectors * s.eigenvalues, axis=0)
    assert np.all(resid <= 1e-8 * np.linalg.norm(K.K, 2))
    # eigenfunctions advance by their eigenvalue along the data
    phi_x, phi_y = s.eigenfunctions(SQUARES, X), s.eigenfunctions(SQUARES, Y)
    np.testing.assert_allclose(phi_y, s.eigenvalues[:, None] * phi_x, atol=1e-8)


def test_spectrum_of_identity():
    np.testing.assert_allclose(koopman_spectrum(np.eye(4)).eigenvalues, np.ones(4))


def test_spectrum_residual_bound_on_random_matrices():
    rng = np.random.default_rng(7)
    for _ in range(20):
        K = rng.standard_normal((5, 5))
        s = koopman_spectrum(K)
        assert np.all(np.diff(np.abs(s.eigenvalues)) <= 1e-12)
        resid = np.linalg.norm(K @ s.eigenvectors - s.eigenvectors * s.eigenvalues, axis=0)
        assert np.all(resid <= 1e-8 * np.linalg.norm(K, 2))


# -- lifted LTI -------------------------------------------------------------------

def synthetic_lifted(rng, N=6, m=1, M=500):
    A0 = stable_matrix(rng, N)
    B0 = rng.standard_normal((N, m))
    XL = rng.standard_normal((N, M))
    U = rng.standard_normal((m, M))
    return A0, B0, XL, A0 @ XL + B0 @ U, U


def test_fit_recovers_known_pair():
    A0, B0, XL, YL, U = synthetic_lifted(np.random.default_rng(8))
    sys_ = fit_lifted_lti(XL, YL, U, XL[:2], ridge=0.0)
    np.testing.assert_allclose(sys_.A, A0, atol=1e-8)
    np.testing.assert_allclose(sys_.B, B0, atol=1e-8)
    assert np.all(sys_.D == 0) and sys_.D.shape == (2, 1)


def test_fit_without_inputs_matches_dmd():
    rng = np.random.default_rng(9)
    XL = rng.standard_normal((4, 100))
    YL = stable_matrix(rng, 4) @ XL + 0.05 * rng.standard_normal((4, 100))
    sys_ = fit_lifted_lti(XL, YL, np.zeros((1, 100)), XL[:2], ridge=0.0)
    np.testing.assert_allclose(sys_.A, dmd_koopman(XL, YL).K, atol=1e-8)
    np.testing.assert_allclose(sys_.B, 0.0, atol=1e-12)


def test_readout_is_exact_when_state_is_in_the_lift():
    X = np.random.default_rng(10).standard_normal((2, 50))
    XL = np.vstack([X, np.sin(X), X[:1] * X[1:]])
    sys_ = fit_lifted_lti(XL, XL, np.zeros((1, 50)), X)
    np.testing.assert_allclose(sys_.C @ XL, X, atol=1e-10)


def test_fit_dimension_checks():
    with pytest.raises(DimensionError):
        fit_lifted_lti(np.zeros((3, 5)), np.zeros((3, 4)), np.zeros((1, 5)), np.zeros((2, 5)))
    with pytest.raises(DimensionError):
        fit_lifted_lti(np.ones((1, 5)), np.ones((1, 5)), np.zeros((1, 5)), np.zeros((2, 5)))


def _nonlinear_lifted(seed=11, M=300):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (2, M))
    U = rng.uniform(-1, 1, (1, M))
    Y = np.vstack([X[0] + 0.1 * X[1], X[1] - 0.1 * np.sin(X[0]) + 0.1 * U[0]])
    return SQUARES.lift(X), SQUARES.lift(Y), U, X


def test_least_squares_fit_is_stationary_under_perturbation():
    XL, YL, U, X = _nonlinear_lifted()
    sys_ = fit_lifted_lti(XL, YL, U, X, ridge=0.0)
    base = heuristics(sys_, XL, YL, U).h1_frobenius
    assert base > 0
    rng = np.random.default_rng(12)
    AB = np.hstack([sys_.A, sys_.B])
    for _ in range(100):
        D = rng.standard_normal(AB.shape)
        P = AB + 1e-3 * D / np.linalg.norm(D)
        moved = LinearLiftedSystem(P[:, :3], P[:, 3:], sys_.C)
        assert heuristics(moved, XL, YL, U).h1_frobenius >= base


def test_duplicating_snapshots_leaves_fit_unchanged():
    XL, YL, U, X = _nonlinear_lifted()
    fit = fit_lifted_lti(XL, YL, U, X)
    twice = fit_lifted_lti(np.hstack([XL, XL]), np.hstack([YL, YL]), np.hstack([U, U]), np.hstack([X, X]))
    np.testing.assert_allclose(twice.A, fit.A, atol=1e-10)
    np.testing.assert_allclose(twice.B, fit.B, atol=1e-10)
    A0, B0, XL, YL, U = synthetic_lifted(np.random.default_rng(13))
    one = fit_lifted_lti(XL, YL, U, XL[:2])
    dup = fit_lifted_lti(np.hstack([XL, XL[:, :1]]), np.hstack([YL, YL[:, :1]]), np.hstack([U, U[:, :1]]),
                         np.hstack([XL[:2], XL[:2, :1]]))
    np.testing.assert_allclose(dup.A, one.A, atol=1e-10)
    np.testing.assert_allclose(dup.B, one.B, atol=1e-10)


# -- controllability and heuristics -------------------------------------------------

def test_controllability_examples():
    Q, r = controllability([[1, 1], [0, 1]], [[0], [1]])
    np.testing.assert_array_equal(Q, [[0, 1], [1, 1]])
    assert r == 2
    Q, r = controllability(np.eye(2), [[1], [0]])
    np.testing.assert_array_equal(Q, [[1, 1], [0, 0]])
    assert r == 1
    assert controllability(np.eye(3), np.zeros((3, 1)))[1] == 0


def test_svd_rank_matches_gram_schmidt():
    rng = np.random.default_rng(14)
    ranks = set()
    for _ in range(200):
        N = int(rng.integers(1, 7))
        m = int(rng.integers(1, 3))
        A = rng.choice([-1, 0, 0, 1], size=(N, N)).astype(float)
        B = rng.choice([0, 0, 1], size=(N, m)).astype(float)
        Q, r = controllability(A, B)
        assert r == gram_schmidt_rank(Q)
        ranks.add(r < N)
    assert ranks == {True, False}


def test_matrix_rank_tolerance_override():
    Q = np.diag([1.0, 1e-6])
    assert matrix_rank(Q) == 2 and matrix_rank(Q, tol=1e-3) == 1


def test_heuristics_on_exact_data():
    A0, B0, XL, YL, U = synthetic_lifted(np.random.default_rng(15))
    sys_ = fit_lifted_lti(XL, YL, U, XL[:2], ridge=0.0)
    rep = heuristics(sys_, XL, YL, U, epsilon=1e-2)
    assert rep.h1_max_abs < 1e-9 and rep.h2 == 0 and rep.ctrb_rank == 6 and rep.admissible
    assert rep.h2 == rep.lift_dim - rep.ctrb_rank


def test_heuristics_flags_uncontrollable_and_vacuous_threshold():
    A0, B0, XL, YL, U = synthetic_lifted(np.random.default_rng(16))
    zero_b = LinearLiftedSystem(A0, np.zeros_like(B0), np.eye(2, 6))
    rep = heuristics(zero_b, XL, YL, U, epsilon=np.inf)
    assert rep.h2 == 6 and not rep.admissible
    rep = heuristics(LinearLiftedSystem(A0, B0, np.eye(2, 6)), XL, YL + 5.0, U, epsilon=np.inf)
    assert rep.admissible


def test_report_round_trip():
    rep = IdentificationReport(3, 0.1, 0.01, 3, 0, False, 0.01, {"mode": "raw-only"})
    assert IdentificationReport.from_dict(rep.to_dict()) == rep
