"""P-greedy point selection.

The squared power function of a center set X_n is maintained through the
Newton basis ``v_1, ..., v_n`` of the kernel translates::

    P_n(x)^2 = k(x, x) - sum_j v_j(x)^2

Each step adds the candidate with the largest power. Selection never looks
at target values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import accel
from .accel import njit
from .errors import InvalidArgument, NumericalFailure
from .kernels import KernelSpec, gram, kernel_diag

POWER = "power"
POWER_SQUARED = "power_squared"
NEGATIVE_FLOOR = -1e-12


@dataclass
class GreedySelection:
    selected_indices: list
    power_history: list
    eps_tol: float
    tol_mode: str
    final_power: float = float("nan")
    stop_reason: str = ""
    centers: np.ndarray | None = None
    basis_at_centers: np.ndarray | None = None
    spec: KernelSpec | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.selected_indices)


def _criterion(p2, tol_mode):
    return p2 if tol_mode == POWER_SQUARED else math.sqrt(max(p2, 0.0))


@njit(nogil=True)
def _update_numba(family, degree, c, a, X, xi, V, n, i, pmax, p2):
    N, d = X.shape
    inv = 1.0 / math.sqrt(pmax)
    bad = False
    for r in range(N):
        if family == 0:
            s = 0.0
            for q in range(d):
                s += X[r, q] * xi[q]
            kv = (1.0 + c * s) ** degree
        else:
            s = 0.0
            for q in range(d):
                t = X[r, q] - xi[q]
                s += t * t
            kv = math.exp(-a * s)
        for l in range(n):
            kv -= V[r, l] * V[i, l]
        v = kv * inv
        if not np.isfinite(v):
            bad = True
        V[r, n] = v
        p2[r] -= v * v
    return bad


def _update_numpy(spec, X, xi, V, n, i, pmax, p2):
    col = gram(spec, X, xi[None, :])[:, 0]
    if n:
        col -= V[:, :n] @ V[i, :n]
    v = col / math.sqrt(pmax)
    V[:, n] = v
    p2 -= v * v
    return not np.all(np.isfinite(v))


def p_greedy_select(candidates, spec: KernelSpec, eps_tol, tol_mode=POWER_SQUARED, max_points=500):
    """Select centers from ``candidates`` by maximizing the power function.

    Parameters
    ----------
    candidates : (N, d) array
        Distinct points; exact duplicates must be removed beforehand
        (see :func:`dedup_candidates`).
    spec : KernelSpec
    eps_tol : float
        Stop once the largest power over unselected candidates is at most
        this value, measured as P or P^2 according to ``tol_mode``.
    tol_mode : {"power", "power_squared"}
    max_points : int

    Returns
    -------
    GreedySelection
        ``power_history[n]`` is the criterion value of the point chosen at
        step ``n``. Ties are broken by the smallest candidate index.
    """
    X = np.asarray(candidates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise InvalidArgument("no candidates")
    if spec.input_dim is not None and X.shape[1] != spec.input_dim:
        raise InvalidArgument(f"candidates have dimension {X.shape[1]}, kernel expects {spec.input_dim}")
    if tol_mode not in (POWER, POWER_SQUARED):
        raise InvalidArgument(f"unknown tol_mode {tol_mode!r}")
    if not eps_tol > 0:
        raise InvalidArgument("eps_tol must be positive")
    if max_points < 1:
        raise InvalidArgument("max_points must be at least 1")

    X = np.ascontiguousarray(X)
    N = X.shape[0]
    cap = min(int(max_points), N)
    with np.errstate(over="ignore", invalid="ignore"):  # reported below
        p2 = kernel_diag(spec, X).astype(float)
    if not np.all(np.isfinite(p2)):
        raise NumericalFailure("non-finite kernel diagonal")
    V = np.zeros((N, cap))
    selected, history = [], []
    use_numba = accel.NUMBA_ENABLED
    stop_reason = "max_points"
    final = float("nan")

    for n in range(cap + 1):
        if n == N:
            final, stop_reason = 0.0, "exhausted"
            break
        i = int(np.argmax(p2))
        pmax = float(p2[i])
        crit = _criterion(pmax, tol_mode)
        if crit <= eps_tol:
            final, stop_reason = crit, "tolerance"
            break
        if n == cap:
            final = crit
            break
        selected.append(i)
        history.append(crit)
        if use_numba:
            bad = _update_numba(spec.family_code, spec.degree, spec.inner_scale, spec.shape,
                                X, X[i].copy(), V, n, i, pmax, p2)
        else:
            bad = _update_numpy(spec, X, X[i].copy(), V, n, i, pmax, p2)
        if bad:
            raise NumericalFailure(f"non-finite Newton basis values at step {n}")
        p2[selected] = 0.0
        low = p2.min()
        if low < NEGATIVE_FLOOR:
            raise NumericalFailure(f"power function fell to {low:.3e} at step {n}; "
                                   "duplicate candidates or a non-positive-definite kernel")
        np.maximum(p2, 0.0, out=p2)

    idx = np.array(selected, dtype=int)
    return GreedySelection(
        selected_indices=[int(k) for k in selected],
        power_history=[float(h) for h in history],
        eps_tol=float(eps_tol),
        tol_mode=tol_mode,
        final_power=float(final),
        stop_reason=stop_reason,
        centers=X[idx].copy(),
        basis_at_centers=V[idx, : len(selected)].copy(),
        spec=spec,
    )


def newton_basis(selection: GreedySelection, points):
    """Newton basis functions of a selection evaluated at arbitrary points."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    C, L = selection.centers, selection.basis_at_centers
    K = gram(selection.spec, P, C)
    n = C.shape[0]
    out = np.zeros((P.shape[0], n))
    for j in range(n):
        out[:, j] = (K[:, j] - out[:, :j] @ L[j, :j]) / L[j, j]
    return out


def power_squared(selection: GreedySelection, points):
    """Squared power function of the selected centers, via the Newton basis."""
    V = newton_basis(selection, points)
    return kernel_diag(selection.spec, points) - np.sum(V * V, axis=1)


def dedup_candidates(X):
    """Drop exact duplicates (first occurrence wins) and the origin.

    Returns the candidate array and the row index of each candidate in ``X``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        return X.copy(), np.zeros(0, dtype=int)
    _, first = np.unique(X, axis=0, return_index=True)
    first = np.sort(first)
    first = first[np.any(X[first] != 0.0, axis=1)]
    return X[first].copy(), first
