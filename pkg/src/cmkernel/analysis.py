"""Validation tools for center-manifold surrogates.

* :func:`taylor_center_manifold` computes the Taylor expansion of the manifold
  ``y = h(x)`` degree by degree from the invariance equation
  ``Dh(x) f1(x, h(x)) = f2(x, h(x))``; it is used as an oracle that does not
  depend on data or kernels.
* :func:`pde_residual` / :func:`residual_grid` evaluate the invariance residual
  of any manifold model.
* :func:`integrate_reduced` runs the reduced dynamics ``x' = f1(x, h(x))`` and
  :func:`classify_stability` turns a few such runs into a stable/unstable call.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (MAX_NEWTON_ITER, NEWTON_TOL, SplitSystem, num_steps,
                       newton_implicit_euler)
from .errors import InvalidArgument, OracleFailure, StepFailure
from .polynomial import (monomials, p_add, p_deriv, p_degree_part, p_mul, substitute)

# conventions of the stability probe (not tied to any particular system)
PROBE_RADIUS = 0.05
PROBE_T = 200.0
PROBE_DT = 0.1
PROBE_MARGIN = 0.01


class PolynomialMap:
    """Polynomial map ``R^d -> R^m`` stored as per-degree coefficient tables.

    Parameters
    ----------
    d, m : int
    tables : dict
        ``{degree: {exponent tuple: coefficient vector of length m}}``.
        Degrees 0 and 1 must be absent or zero (``h(0) = 0``, ``Dh(0) = 0``).
    """

    def __init__(self, d, m, tables):
        self.d, self.m = int(d), int(m)
        self.tables = {}
        for deg, table in tables.items():
            deg = int(deg)
            clean = {}
            for exps, coef in table.items():
                exps = tuple(int(e) for e in exps)
                coef = np.asarray(coef, dtype=float).reshape(self.m)
                if len(exps) != self.d or sum(exps) != deg:
                    raise InvalidArgument(f"exponent {exps} does not belong to degree {deg}")
                clean[exps] = coef
            if deg < 2 and any(np.any(c != 0) for c in clean.values()):
                raise InvalidArgument("a manifold map has no constant or linear part")
            self.tables[deg] = clean
        self.max_degree = max(self.tables, default=0)
        terms = [(e, c) for t in self.tables.values() for e, c in t.items()]
        self._exps = np.array([e for e, _ in terms], dtype=float).reshape(len(terms), self.d)
        self._coefs = np.array([c for _, c in terms], dtype=float).reshape(len(terms), self.m)

    def component(self, j):
        """Output ``j`` as a scalar polynomial dict."""
        return {e: float(c[j]) for t in self.tables.values() for e, c in t.items()}

    def _points(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim <= 1
        X = X.reshape(1, -1) if single else X
        if X.shape[1] != self.d:
            raise InvalidArgument(f"expected points of dimension {self.d}, got {X.shape[1]}")
        return X, single

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        X, single = self._points(x)
        mono = np.prod(X[:, None, :] ** self._exps[None, :, :], axis=2)
        out = mono @ self._coefs
        return out[0] if single else out

    def jacobian(self, x):
        """Analytic Jacobian, shape ``(m, d)`` (or ``(P, m, d)`` for a batch)."""
        X, single = self._points(x)
        out = np.zeros((X.shape[0], self.m, self.d))
        for v in range(self.d):
            e = self._exps[:, v]
            lowered = self._exps.copy()
            lowered[:, v] = np.maximum(e - 1, 0)
            dmono = e[None, :] * np.prod(X[:, None, :] ** lowered[None, :, :], axis=2)
            out[:, :, v] = dmono @ self._coefs
        return out[0] if single else out

    def to_dict(self):
        return {
            "d": self.d,
            "m": self.m,
            "max_degree": self.max_degree,
            "tables": {str(deg): [{"exponents": list(e), "coefficients": [float(v) for v in c]}
                                  for e, c in sorted(table.items(), reverse=True)]
                       for deg, table in sorted(self.tables.items())},
        }

    @classmethod
    def from_dict(cls, data):
        tables = {int(deg): {tuple(t["exponents"]): t["coefficients"] for t in rows}
                  for deg, rows in data["tables"].items()}
        return cls(data["d"], data["m"], tables)

    def __eq__(self, other):
        if not isinstance(other, PolynomialMap) or (self.d, self.m) != (other.d, other.m):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"PolynomialMap(d={self.d}, m={self.m}, max_degree={self.max_degree})"


def save_taylor(pmap: PolynomialMap, path, system_name=None):
    data = pmap.to_dict()
    if system_name is not None:
        data = {"system": system_name, **data}
    with open(path, "w", newline="\n") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def load_taylor(path) -> PolynomialMap:
    with open(path) as fh:
        return PolynomialMap.from_dict(json.load(fh))


# -- Taylor oracle ---------------------------------------------------------------

def _invariance_defect(system, h, degree):
    """Polynomial ``Dh f1(x, h) - f2(x, h)`` truncated at ``degree``, per output."""
    d, m = system.d, system.m
    f1 = [substitute(system.f1.component(i), d, h, degree) for i in range(d)]
    f2 = [substitute(system.f2.component(j), d, h, degree) for j in range(m)]
    out = []
    for j in range(m):
        r = {}
        for i in range(d):
            r = p_add(r, p_mul(p_deriv(h[j], i), f1[i], degree))
        out.append(p_add(r, f2[j], -1.0))
    return out


def taylor_center_manifold(system: SplitSystem, max_degree: int) -> PolynomialMap:
    """Taylor polynomial of the center manifold up to ``max_degree``.

    The linear part is zero (the splitting separates the spectra). For each
    degree ``k >= 2`` the degree-``k`` coefficients of the invariance defect
    depend affinely on the unknown degree-``k`` coefficients of ``h``; the
    resulting square system is assembled column by column and solved.

    Raises
    ------
    OracleFailure
        If the degree-``k`` system is singular (a resonance).
    """
    if max_degree < 2:
        raise InvalidArgument("max_degree must be at least 2")
    if system.d == 0:
        raise InvalidArgument("system has no center directions")
    d, m = system.d, system.m
    h = [{} for _ in range(m)]
    tables = {}
    for k in range(2, max_degree + 1):
        basis = monomials(d, k)
        rows = [(j, e) for j in range(m) for e in basis]

        def defect_vector(hh):
            defect = _invariance_defect(system, hh, k)
            parts = [p_degree_part(defect[j], k) for j in range(m)]
            return np.array([parts[j].get(e, 0.0) for j, e in rows])

        r0 = defect_vector(h)
        L = np.empty((len(rows), len(rows)))
        for col, (j, e) in enumerate(rows):
            trial = [dict(p) for p in h]
            trial[j][e] = trial[j].get(e, 0.0) + 1.0
            L[:, col] = defect_vector(trial) - r0
        scale = max(np.abs(L).max(), 1.0)
        if np.linalg.matrix_rank(L, tol=1e-12 * scale) < len(rows):
            raise OracleFailure(f"degree-{k} coefficient system is singular (resonance)", degree=k)
        coef = np.linalg.solve(L, -r0)
        table = {e: np.zeros(m) for e in basis}
        for (j, e), c in zip(rows, coef):
            h[j][e] = float(c) + 0.0  # no negative zeros in the tables
            table[e][j] = float(c) + 0.0
        tables[k] = table
    return PolynomialMap(d, m, tables)


# -- residuals ---------------------------------------------------------------------

def _model_dims(model):
    if isinstance(model, PolynomialMap):
        return model.d, model.m
    return model.d, model.m


def _check_model(model, system):
    d, m = _model_dims(model)
    if (d, m) != (system.d, system.m):
        raise InvalidArgument(f"model maps R^{d} -> R^{m}, system needs R^{system.d} -> R^{system.m}")


def pde_residual(model, system: SplitSystem, x) -> np.ndarray:
    """Invariance residual ``Dmodel(x) f1(x, model(x)) - f2(x, model(x))``."""
    _check_model(model, system)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != system.d:
        raise InvalidArgument(f"expected a point in R^{system.d}")
    y = np.asarray(model(x), dtype=float).reshape(system.m)
    z = np.concatenate([x, y])
    J = np.asarray(model.jacobian(x), dtype=float).reshape(system.m, system.d)
    return J @ system.f1.evaluate(z) - system.f2.evaluate(z)


@dataclass
class ResidualReport:
    axes: list
    points: np.ndarray
    residuals: np.ndarray
    max_norm: float
    mean_norm: float
    model_id: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def norms(self):
        return np.linalg.norm(self.residuals, axis=1)


def tensor_grid(axes):
    """Nodes of the tensor grid spanned by 1D ``axes``; the last axis runs fastest."""
    axes = [np.asarray(a, dtype=float).reshape(-1) for a in axes]
    if not axes or any(a.size == 0 for a in axes):
        raise InvalidArgument("grid must be non-empty")
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))


def residual_grid(model, system: SplitSystem, axes, model_id="") -> ResidualReport:
    """Evaluate :func:`pde_residual` on a tensor grid."""
    _check_model(model, system)
    axes = [np.asarray(a, dtype=float).reshape(-1) for a in axes]
    if len(axes) != system.d:
        raise InvalidArgument(f"grid has {len(axes)} axes, system has d = {system.d}")
    P = tensor_grid(axes)
    R = np.empty((P.shape[0], system.m))
    for k, x in enumerate(P):
        try:
            R[k] = pde_residual(model, system, x)
        except Exception as exc:
            raise type(exc)(f"residual evaluation failed at {x.tolist()}: {exc}") from exc
    norms = np.linalg.norm(R, axis=1)
    return ResidualReport(axes=axes, points=P, residuals=R, max_norm=float(norms.max()),
                          mean_norm=float(norms.mean()), model_id=model_id)


# -- reduced dynamics ----------------------------------------------------------------

def integrate_reduced(model, system: SplitSystem, x0, t0, T, dt,
                      newton_tol=NEWTON_TOL, max_newton_iter=MAX_NEWTON_ITER):
    """Implicit Euler on the reduced system ``x' = f1(x, model(x))``.

    Returns a list of ``(time, x)`` pairs including the initial state.
    Raises :class:`StepFailure` when a Newton solve fails; the pairs computed
    so far are attached to it as ``partial``.
    """
    _check_model(model, system)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != system.d:
        raise InvalidArgument(f"initial state must have length {system.d}")
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    d, m = system.d, system.m

    def fun(w):
        y = np.asarray(model(w), dtype=float).reshape(m)
        return system.f1.evaluate(np.concatenate([w, y]))

    def jac(w):
        y = np.asarray(model(w), dtype=float).reshape(m)
        J = system.f1.jacobian(np.concatenate([w, y]))
        Dh = np.asarray(model.jacobian(w), dtype=float).reshape(m, d)
        return J[:, :d] + J[:, d:] @ Dh

    out = [(float(t0), x.copy())]
    for k in range(num_steps(t0, T, dt)):
        w, status, resid = newton_implicit_euler(fun, jac, x, dt, newton_tol, max_newton_iter)
        if status != 0:
            exc = StepFailure(f"reduced implicit Euler step {k} failed (status {status}, "
                              f"residual {resid:.3e})", iterate=w, residual=resid, step_index=k)
            exc.partial = out
            raise exc
        x = w
        out.append((float(t0 + (k + 1) * dt), x.copy()))
    return out


def probe_points(d, radius=PROBE_RADIUS):
    """Initial states on the sphere of the given radius: ``±radius`` along
    each axis and the diagonals (for ``d >= 2``)."""
    pts = []
    for i in range(d):
        for s in (1.0, -1.0):
            e = np.zeros(d)
            e[i] = s * radius
            pts.append(e)
    if d >= 2:
        for signs in itertools.product((1.0, -1.0), repeat=d):
            pts.append(np.array(signs) * radius / np.sqrt(d))
    return pts


def _linear_baseline(system, x0, T, dt):
    """Implicit Euler on ``x' = F1 x`` with the probe's step size.

    For a rotation block the scheme itself dissipates (factor
    ``(1 + dt^2)^(-1/2)`` per step), which would swamp the nonlinear decay.
    """
    step = np.linalg.inv(np.eye(system.d) - dt * system.F1)
    x = np.asarray(x0, dtype=float)
    for _ in range(num_steps(0.0, T, dt)):
        x = step @ x
    return x


def classify_stability(model, system: SplitSystem, radius=PROBE_RADIUS, T=PROBE_T, dt=PROBE_DT,
                       margin=PROBE_MARGIN):
    """Classify the origin by running the reduced dynamics from probe points.

    Each probe compares ``|x(T)|`` with the norm reached by the same scheme
    on the linear part ``x' = F1 x``; the ratio isolates the effect of the
    nonlinear terms, i.e. of the manifold model. A probe is ``"unstable"``
    when the ratio exceeds ``1 + margin`` (a breakdown of the integration is
    judged at the last accepted state) and ``"stable"`` when it is below
    ``1 - margin``. Cubic decay ``x' = -x^3`` from 0.05 over T = 200 gives
    ratio ``1/sqrt(2)``; for a rotation block the scheme's own damping shrinks
    the state quickly and ratios stay within a few percent of 1.

    The verdict is ``"unstable"`` if any probe is unstable, ``"stable"`` if
    all are stable, otherwise ``"inconclusive"``.

    Returns
    -------
    label : str
    probes : list of dict
    """
    probes = []
    for x0 in probe_points(system.d, radius):
        base = float(np.linalg.norm(_linear_baseline(system, x0, T, dt)))
        try:
            traj = integrate_reduced(model, system, x0, 0.0, T, dt)
            final = traj[-1][1]
            failed = False
        except StepFailure as exc:
            # last accepted state; Newton fails once the step equation loses its root
            t_fail, final = exc.partial[-1]
            base = float(np.linalg.norm(_linear_baseline(system, x0, t_fail, dt)))
            failed = True
        ratio = float(np.linalg.norm(final)) / base
        if ratio > 1.0 + margin:
            label = "unstable"
        elif ratio < 1.0 - margin and not failed:
            label = "stable"
        else:
            label = "inconclusive"
        probes.append({"x0": x0.tolist(), "final_norm": float(np.linalg.norm(final)),
                       "baseline_norm": base, "ratio": ratio, "step_failure": failed,
                       "label": label})
    labels = {p["label"] for p in probes}
    if "unstable" in labels:
        verdict = "unstable"
    elif labels == {"stable"}:
        verdict = "stable"
    else:
        verdict = "inconclusive"
    return verdict, probes
