"""Kernel regression with hard value and derivative constraints at the origin.

The surrogate is::

    s(x) = sum_i k(x, x_i) alpha_i + sum_j dk/dy_j(x, 0) beta_j

with centers ``x_1..x_N`` plus ``x_{N+1} = 0``. Coefficients come from the
symmetric block system ``[[A + W, B], [B^T, C]] (alpha, beta) = (y, 0, 0)``
where ``W`` carries the regularisation on the data rows and is zero on the
origin rows, so ``s(0) = 0`` and ``Ds(0) = 0`` hold exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import FitFailure, InvalidArgument
from .kernels import KernelSpec, gram, grad_first_rows, grad_second_rows, kernel_mixed_hessian

DIAG_JITTER = "diag-jitter"
LITERAL = "literal"
WEIGHT_MODES = (DIAG_JITTER, LITERAL)
COND_LIMIT = 1e14


@dataclass
class RegressionProblem:
    centers: np.ndarray
    targets: np.ndarray
    spec: KernelSpec
    lam: float = 1e-10
    weight_mode: str = DIAG_JITTER

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.centers.ndim == 1:
            self.centers = self.centers[:, None]
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if self.centers.shape[0] != self.targets.shape[0]:
            raise InvalidArgument("centers and targets must have equal length")
        if self.weight_mode not in WEIGHT_MODES:
            raise InvalidArgument(f"unknown weight mode {self.weight_mode!r}")
        if not self.lam > 0:
            raise InvalidArgument("lambda must be positive")
        if self.spec.input_dim is not None and self.centers.shape[1] != self.spec.input_dim:
            raise InvalidArgument("center dimension does not match the kernel")
        if np.any(np.all(self.centers == 0.0, axis=1)):
            raise InvalidArgument("the origin is added internally and must not be a center")
        if len(np.unique(self.centers, axis=0)) != len(self.centers):
            raise InvalidArgument("duplicate centers")

    @property
    def d(self):
        return self.centers.shape[1]

    @property
    def m(self):
        return self.targets.shape[1]

    @property
    def weight_inverse(self):
        """Diagonal entry of W on data rows (``1 / omega``)."""
        return self.lam if self.weight_mode == DIAG_JITTER else 1.0 / self.lam

    def centers_with_origin(self):
        return np.vstack([self.centers, np.zeros((1, self.d))])


@dataclass
class SystemBlocks:
    A: np.ndarray
    W: np.ndarray
    B: np.ndarray
    C: np.ndarray
    rhs_values: np.ndarray
    rhs_derivs: np.ndarray

    def gram_matrix(self):
        """Gram matrix of the value and derivative functionals."""
        return np.block([[self.A, self.B], [self.B.T, self.C]])

    def matrix(self):
        return np.block([[self.A + self.W, self.B], [self.B.T, self.C]])

    def rhs(self):
        return np.concatenate([self.rhs_values, self.rhs_derivs])


def assemble_blocks(problem: RegressionProblem) -> SystemBlocks:
    spec, m, d = problem.spec, problem.m, problem.d
    X = problem.centers_with_origin()
    origin = np.zeros(d)
    eye = np.eye(m)
    A = np.kron(gram(spec, X), eye)
    B = np.kron(grad_second_rows(spec, X, origin), eye)
    C = np.kron(kernel_mixed_hessian(spec, origin, origin), eye)
    w = np.full(X.shape[0], problem.weight_inverse)
    w[-1] = 0.0
    W = np.diag(np.repeat(w, m))
    rhs_values = np.concatenate([problem.targets.reshape(-1), np.zeros(m)])
    return SystemBlocks(A, W, B, C, rhs_values, np.zeros(d * m))


@dataclass
class Surrogate:
    spec: KernelSpec
    centers_with_origin: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    lam: float = 1e-10
    weight_mode: str = DIAG_JITTER
    fit_report: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.centers_with_origin.shape[1]

    @property
    def m(self):
        return self.alpha.shape[1]

    def coefficients(self):
        """Stacked ``(alpha, beta)`` in the ordering of :class:`SystemBlocks`."""
        return np.concatenate([self.alpha.reshape(-1), self.beta.reshape(-1)])

    def __call__(self, x):
        return surrogate_eval(self, x)

    def jacobian(self, x):
        return surrogate_jacobian(self, x)


def _solve(M, rhs):
    cond = float(np.linalg.cond(M))
    solver = "ldl"
    coef = None
    if np.isfinite(cond) and cond <= COND_LIMIT:
        try:
            coef = scipy.linalg.solve(M, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            coef = None
    if coef is None:
        solver = "lstsq"
        coef = scipy.linalg.lstsq(M, rhs)[0]
    return coef, cond, solver


def fit(problem: RegressionProblem) -> Surrogate:
    """Solve the constrained regression and return the fitted surrogate."""
    blocks = assemble_blocks(problem)
    M, rhs = blocks.matrix(), blocks.rhs()
    coef, cond, solver = _solve(M, rhs)
    if not np.all(np.isfinite(coef)):
        raise FitFailure("linear solve produced non-finite coefficients; try a larger lambda", cond)
    resid = M @ coef - rhs
    rhs_norm = np.linalg.norm(rhs)
    rel = float(np.linalg.norm(resid) / rhs_norm) if rhs_norm > 0 else float(np.linalg.norm(resid))
    backward = float(np.linalg.norm(resid) /
                     (np.linalg.norm(M, 2) * np.linalg.norm(coef) + rhs_norm or 1.0))
    n1, m, d = problem.centers.shape[0] + 1, problem.m, problem.d
    sur = Surrogate(
        spec=problem.spec,
        centers_with_origin=problem.centers_with_origin(),
        alpha=coef[: n1 * m].reshape(n1, m),
        beta=coef[n1 * m:].reshape(d, m),
        lam=problem.lam,
        weight_mode=problem.weight_mode,
    )
    origin = np.zeros(d)
    sur.fit_report = {
        "solver": solver,
        "condition": cond,
        "relative_residual": rel,
        "backward_error": backward,
        "s0_norm": float(np.linalg.norm(surrogate_eval(sur, origin))),
        "ds0_norm": float(np.linalg.norm(surrogate_jacobian(sur, origin))),
    }
    return sur


def _check_dim(s, X):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = X.reshape(1, -1) if single else X
    if X.shape[1] != s.d:
        raise InvalidArgument(f"expected points of dimension {s.d}, got {X.shape[1]}")
    return X, single


def _ext_dot(a, b):
    # coefficients reach 1e6 and more with tiny lambda; the expansion cancels
    # heavily near the origin, so accumulate in extended precision
    return (a.astype(np.longdouble) @ b.astype(np.longdouble)).astype(float)


def surrogate_eval(s: Surrogate, x):
    """Evaluate at one point (shape ``(d,)``) or a batch (shape ``(P, d)``)."""
    X, single = _check_dim(s, x)
    K = np.hstack([gram(s.spec, X, s.centers_with_origin), grad_second_rows(s.spec, X, np.zeros(s.d))])
    out = _ext_dot(K, np.vstack([s.alpha, s.beta]))
    return out[0] if single else out


def surrogate_jacobian(s: Surrogate, x):
    """Jacobian ``Ds(x)`` of shape ``(m, d)``."""
    X, single = _check_dim(s, x)
    if not single:
        return np.array([surrogate_jacobian(s, row) for row in X])
    x = X[0]
    G1 = grad_first_rows(s.spec, x, s.centers_with_origin)
    H = kernel_mixed_hessian(s.spec, x, np.zeros(s.d))
    return _ext_dot(np.hstack([s.alpha.T, s.beta.T]), np.vstack([G1, H.T]))


def objective_terms(s: Surrogate, problem: RegressionProblem):
    """Return ``(native norm squared, weighted data misfit)``."""
    C = problem.centers_with_origin()
    if s.centers_with_origin.shape != C.shape or not np.array_equal(s.centers_with_origin, C):
        raise InvalidArgument("surrogate is not expressed in the problem's representer basis")
    if s.m != problem.m:
        raise InvalidArgument("output dimension mismatch")
    c = s.coefficients().astype(np.longdouble)
    G = assemble_blocks(problem).gram_matrix().astype(np.longdouble)
    norm_sq = float(c @ G @ c)
    omega = 1.0 / problem.weight_inverse
    r = surrogate_eval(s, problem.centers) - problem.targets
    return norm_sq, float(omega * np.sum(r * r))


def objective_value(s: Surrogate, problem: RegressionProblem) -> float:
    norm_sq, data = objective_terms(s, problem)
    return norm_sq + data
