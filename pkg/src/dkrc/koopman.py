"""Koopman operator approximation and lifted linear system identification.

Matrix conventions
------------------
Snapshots are stored column-wise.  ``dmd_koopman`` returns ``K = Y X^+`` so
that ``Y ~ K X``.  ``edmd_koopman`` returns ``K = G^+ A`` (coefficient
convention), which acts on dictionary coefficient vectors: ``Psi(y)^T ~
Psi(x)^T K``.  Both expose ``KoopmanMatrix.forward`` (the matrix mapping
``Psi(x)`` to ``Psi(y)``) so the two methods can be compared directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

EPS = np.finfo(float).eps


def pinv(a, rtol=None):
    """SVD pseudoinverse, truncating singular values below ``max(shape) * s_max * eps``.

    Returns ``(pinv, reciprocal_condition)``.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros(a.shape[::-1]), 0.0
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    smax = s[0] if s.size else 0.0
    tol = (max(a.shape) * EPS if rtol is None else rtol) * smax
    keep = s > tol
    inv = (vt[keep].T / s[keep]) @ u[:, keep].T
    rcond = float(s[-1] / smax) if smax > 0 else 0.0
    return inv, rcond


# ----------------------------------------------------------------------------
# dictionaries

class Dictionary:
    """Maps an (n, M) state matrix to an (N, M) matrix of observables."""

    kind = "abstract"
    input_dim: int
    output_dim: int

    def __call__(self, X):
        return self.lift(X)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != self.input_dim:
            raise DimensionError(f"{self.kind} dictionary expects {self.input_dim} rows, got {X.shape[0]}")
        return X

    def lift(self, X):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "output_dim": self.output_dim}


class UnitBasis(Dictionary):
    """Identity embedding (plain DMD)."""

    kind = "unit-basis"

    def __init__(self, n):
        self.input_dim = self.output_dim = int(n)

    def lift(self, X):
        return self._check(X).copy()


class Monomials(Dictionary):
    """Monomials in graded-lexicographic order, or an explicit exponent list.

    ``Monomials(2, max_degree=2)`` yields ``1, x1, x2, x1^2, x1 x2, x2^2``.
    """

    kind = "monomials"

    def __init__(self, n, max_degree=None, exponents=None):
        self.input_dim = int(n)
        if exponents is None:
            if max_degree is None:
                raise DimensionError("give max_degree or exponents")
            exponents = []
            for d in range(max_degree + 1):
                for combo in itertools.combinations_with_replacement(range(n), d):
                    e = [0] * n
                    for k in combo:
                        e[k] += 1
                    exponents.append(e)
        self.exponents = np.array(exponents, dtype=int).reshape(-1, n)
        self.max_degree = max_degree
        self.output_dim = len(self.exponents)

    def lift(self, X):
        X = self._check(X)
        return np.prod(X[None, :, :] ** self.exponents[:, :, None], axis=1)

    def describe(self):
        return {**super().describe(), "exponents": self.exponents.tolist()}


class RBF(Dictionary):
    """Gaussian radial basis functions ``exp(-|x - c|^2 / (2 width^2))``."""

    kind = "rbf"

    def __init__(self, centers, width):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))  # (N, n)
        self.width = float(width)
        self.output_dim, self.input_dim = self.centers.shape

    def lift(self, X):
        X = self._check(X)
        d2 = ((X.T[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / (2.0 * self.width ** 2)).T

    def describe(self):
        return {**super().describe(), "centers": self.centers.tolist(), "width": self.width}


class EncoderDictionary(Dictionary):
    """Lift through a trained encoder network after standardizing its inputs.

    ``input_dim`` counts every encoder input row: the physical state
    (``state_dim`` rows) followed by optional image-latent rows.  When latent
    rows are expected but a caller passes only the physical state, they are
    filled from ``context_fn(state_column)``.
    """

    kind = "encoder"

    def __init__(self, net, mean, std, state_dim=None, context_fn=None):
        self.net = net
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        self.std = np.asarray(std, dtype=float).reshape(-1)
        self.input_dim = len(self.mean)
        self.state_dim = self.input_dim if state_dim is None else int(state_dim)
        self.output_dim = int(net.latent_shape[0])
        self.context_fn = context_fn
        if net.input_shape != (self.input_dim,):
            raise DimensionError(f"encoder input {net.input_shape} does not match {self.input_dim} statistics")

    @property
    def latent_dim(self):
        return self.input_dim - self.state_dim

    def features(self, X, latents=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] == self.input_dim:
            return X
        if X.shape[0] != self.state_dim:
            raise DimensionError(f"encoder dictionary expects {self.state_dim} or {self.input_dim} rows")
        if latents is None:
            if self.context_fn is None:
                raise DimensionError("latent rows missing and no context function available")
            latents = np.column_stack([self.context_fn(col) for col in X.T])
        return np.vstack([X, np.asarray(latents, dtype=float).reshape(self.latent_dim, -1)])

    def lift(self, X, latents=None):
        F = self.features(X, latents)
        Z = (F - self.mean[:, None]) / self.std[:, None]
        return self.net.encode(Z.T).T

    def decode(self, L):
        """Map lifted states back to (unstandardized) encoder inputs."""
        return self.net.decode(np.asarray(L, dtype=float).T).T * self.std[:, None] + self.mean[:, None]

    def describe(self):
        return {**super().describe(), "state_dim": self.state_dim, "mean": self.mean.tolist(),
                "std": self.std.tolist()}


def lift(dictionary: Dictionary, X) -> np.ndarray:
    return dictionary.lift(X)


# ----------------------------------------------------------------------------
# Koopman approximations

@dataclass
class KoopmanMatrix:
    K: np.ndarray
    method: str
    conditioning: float
    residual: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def forward(self) -> np.ndarray:
        """Matrix that advances lifted states: Psi(y) ~ forward @ Psi(x)."""
        return self.K.T if self.method == "edmd" else self.K

    @property
    def coefficients(self) -> np.ndarray:
        """Matrix acting on dictionary coefficient vectors (its right eigenvectors give eigenfunctions)."""
        return self.K if self.method == "edmd" else self.K.T


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite values in Koopman data")


def edmd_koopman(X, Y, dictionary: Dictionary = None, ridge: float = 0.0) -> KoopmanMatrix:
    """EDMD: ``K = (G + ridge I)^+ A`` with ``G``, ``A`` the empirical Gram and cross matrices."""
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    if X.shape != Y.shape or X.shape[1] < 1:
        raise DimensionError(f"X{X.shape} and Y{Y.shape} must be column-aligned and nonempty")
    dictionary = dictionary or UnitBasis(X.shape[0])
    PX, PY = dictionary.lift(X), dictionary.lift(Y)
    _finite(PX, PY)
    M = X.shape[1]
    G = PX @ PX.T / M
    A = PX @ PY.T / M
    Ginv, rcond = pinv(G + ridge * np.eye(len(G)))
    K = Ginv @ A
    notes = []
    if ridge == 0 and rcond < len(G) * EPS:
        notes.append(f"G is numerically singular (rcond={rcond:.3g}); pseudoinverse used")
    return KoopmanMatrix(K, "edmd", rcond, float(np.linalg.norm(G @ K - A)), notes)


def dmd_koopman(X, Y) -> KoopmanMatrix:
    """DMD: ``K = Y X^+``."""
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise DimensionError("X and Y must have the same number of columns")
    _finite(X, Y)
    Xinv, rcond = pinv(X)
    K = Y @ Xinv
    notes = [] if rcond >= max(X.shape) * EPS else [f"X is rank deficient (rcond={rcond:.3g})"]
    return KoopmanMatrix(K, "dmd", rcond, float(np.linalg.norm(K @ X - Y)), notes)


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns v_j of the coefficient-convention matrix

    def eigenfunctions(self, dictionary: Dictionary, X) -> np.ndarray:
        """phi_j(x) = Psi(x)^T v_j, returned as an (N, M) complex matrix."""
        return self.eigenvectors.T @ dictionary.lift(X)


def koopman_spectrum(K) -> SpectralDecomposition:
    """Eigenpairs of the coefficient-convention matrix, sorted by descending modulus."""
    mat = K.coefficients if isinstance(K, KoopmanMatrix) else np.asarray(K, dtype=float)
    _finite(mat)
    try:
        vals, vecs = np.linalg.eig(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    order = sorted(range(len(vals)), key=lambda j: (-abs(vals[j]), -vals[j].real, -vals[j].imag))
    vals, vecs = vals[order], vecs[:, order]
    scale = max(np.linalg.norm(mat, 2), 1.0)
    resid = np.linalg.norm(mat @ vecs - vecs * vals, axis=0)
    if np.any(resid > 1e-8 * scale):
        raise NumericError(f"eigenpair residual {resid.max():.3g} exceeds tolerance")
    return SpectralDecomposition(vals, vecs)


# ----------------------------------------------------------------------------
# lifted controlled systems

@dataclass
class LinearLiftedSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    conditioning: float = 1.0
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(len(self.A), -1)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.A.shape[0] != self.A.shape[1] or self.C.shape[1] != self.lift_dim:
            raise DimensionError(f"inconsistent shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")

    @property
    def D(self):
        return np.zeros((self.state_dim, self.input_dim))

    @property
    def lift_dim(self):
        return self.A.shape[0]

    @property
    def state_dim(self):
        return self.C.shape[0]

    @property
    def input_dim(self):
        return self.B.shape[1]


def fit_lifted_lti(X_lift, Y_lift, U, X_raw, ridge: float = 1e-8) -> LinearLiftedSystem:
    """Least-squares fit of ``Y_lift ~ A X_lift + B U`` and ``X_raw ~ C X_lift``.

    Uses 1/M-normalized normal equations, ``[A, B] = (Y Z^T / M)(Z Z^T / M + ridge I)^+``
    with ``Z = [X_lift; U]``.
    """
    X_lift, Y_lift = np.atleast_2d(X_lift), np.atleast_2d(Y_lift)
    U, X_raw = np.atleast_2d(U), np.atleast_2d(X_raw)
    N, M = X_lift.shape
    if Y_lift.shape != (N, M) or U.shape[1] != M or X_raw.shape[1] != M:
        raise DimensionError("lifted data, controls and raw states must share the column count")
    if N < X_raw.shape[0]:
        raise DimensionError(f"lift dimension {N} is below the state dimension {X_raw.shape[0]}")
    _finite(X_lift, Y_lift, U, X_raw)
    Z = np.vstack([X_lift, U])
    gram = Z @ Z.T / M + ridge * np.eye(len(Z))
    ginv, rcond = pinv(gram)
    AB = (Y_lift @ Z.T / M) @ ginv
    notes = []
    if rcond < len(Z) * EPS:
        notes.append(f"[X_lift; U] Gram matrix is numerically singular (rcond={rcond:.3g})")
    C = X_raw @ pinv(X_lift)[0]
    return LinearLiftedSystem(AB[:, :N], AB[:, N:], C, rcond, notes)


def controllability_matrix(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(len(A), -1)
    blocks = [B]
    for _ in range(len(A) - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def matrix_rank(Q, tol=None) -> int:
    if Q.size == 0:
        return 0
    s = np.linalg.svd(Q, compute_uv=False)
    if tol is None:
        tol = max(Q.shape) * (s[0] if s.size else 0.0) * EPS
    return int(np.sum(s > tol))


def controllability(A, B, tol=None):
    """Returns ``(Q, rank)`` for ``Q = [B, AB, ..., A^{N-1} B]``."""
    Q = controllability_matrix(A, B)
    return Q, matrix_rank(Q, tol)


@dataclass
class IdentificationReport:
    lift_dim: int
    h1_max_abs: float
    h1_frobenius: float  # ||R||_F / sqrt(M)
    ctrb_rank: int
    h2: int
    admissible: bool
    epsilon: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"lift_dim": self.lift_dim, "h1_max_abs": self.h1_max_abs, "h1_frobenius": self.h1_frobenius,
                "ctrb_rank": self.ctrb_rank, "h2": self.h2, "admissible": self.admissible,
                "epsilon": self.epsilon, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def heuristics(system: LinearLiftedSystem, X_lift, Y_lift, U, epsilon: float = 1e-2, tol=None) -> IdentificationReport:
    """Linearization residual (h1) and controllability deficiency (h2) of a fitted system."""
    R = np.atleast_2d(Y_lift) - (system.A @ np.atleast_2d(X_lift) + system.B @ np.atleast_2d(U))
    M = R.shape[1]
    max_abs = float(np.max(np.abs(R))) if R.size else 0.0
    frob = float(np.linalg.norm(R) / np.sqrt(max(M, 1)))
    _, rank = controllability(system.A, system.B, tol)
    h2 = system.lift_dim - rank
    admissible = bool(max_abs < epsilon and h2 == 0)
    return IdentificationReport(system.lift_dim, max_abs, frob, rank, h2, admissible, float(epsilon))

