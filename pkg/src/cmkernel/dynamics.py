"""Split polynomial systems, implicit Euler integration and training data.

A system is stored in split coordinates ``z = (x, y)`` with ``x`` in R^d
(center block) and ``y`` in R^m (stable block)::

    x' = f1(x, y) = F1 x + ...
    y' = f2(x, y) = F2 y + ...

Trajectories are integrated with implicit Euler; each step solves
``w = z + dt f(w)`` by Newton's method with the analytic Jacobian of the
polynomial right-hand side.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import accel
from .accel import njit
from .errors import InvalidArgument, StepFailure
from .polynomial import PolynomialField

NEWTON_TOL = 1e-12
MAX_NEWTON_ITER = 50

# status codes returned by the integration kernels
_OK, _NOT_CONVERGED, _NON_FINITE = 0, 1, 2


@dataclass(frozen=True, eq=False)
class SplitSystem:
    """Polynomial vector field in split coordinates."""

    d: int
    m: int
    f1: PolynomialField
    f2: PolynomialField
    name: str = "custom"

    def __post_init__(self):
        n = self.d + self.m
        if self.d < 0 or self.m < 1:
            raise InvalidArgument("need d >= 0 and m >= 1")
        if self.f1.n_vars != n or self.f2.n_vars != n:
            raise InvalidArgument("f1 and f2 must be polynomials in d + m variables")
        if self.f1.n_out != self.d or self.f2.n_out != self.m:
            raise InvalidArgument("f1 must map to R^d and f2 to R^m")
        if np.any(self.f1.constant_part() != 0) or np.any(self.f2.constant_part() != 0):
            raise InvalidArgument("the origin must be an equilibrium (no constant terms)")
        terms = [(ex, np.concatenate([co, np.zeros(self.m)])) for ex, co in self.f1.terms]
        terms += [(ex, np.concatenate([np.zeros(self.d), co])) for ex, co in self.f2.terms]
        object.__setattr__(self, "field", PolynomialField(terms, n, n))

    @property
    def n(self):
        return self.d + self.m

    @property
    def F1(self):
        return self.f1.linear_part()[:, : self.d]

    @property
    def F2(self):
        return self.f2.linear_part()[:, self.d:]

    def splitting_ok(self, tol=1e-12):
        """True when F1 has spectrum on the imaginary axis and F2 is Hurwitz."""
        ev1 = np.linalg.eigvals(self.F1) if self.d else np.zeros(0)
        ev2 = np.linalg.eigvals(self.F2)
        return bool(np.all(np.abs(ev1.real) <= tol) and np.all(ev2.real < 0))

    def to_dict(self):
        return {
            "name": self.name,
            "d": self.d,
            "m": self.m,
            "f1": self.f1.to_dict()["terms"],
            "f2": self.f2.to_dict()["terms"],
        }

    @classmethod
    def from_dict(cls, data):
        d, m = int(data["d"]), int(data["m"])
        n = d + m

        def field_of(terms, k):
            return PolynomialField([(t["exponents"], t["coefficients"]) for t in terms], n, k)

        return cls(d, m, field_of(data.get("f1", []), d), field_of(data.get("f2", []), m),
                   name=data.get("name", "custom"))


def _system(name, d, m, f1, f2):
    n = d + m
    return SplitSystem(d, m, PolynomialField.from_components(f1, n),
                       PolynomialField.from_components(f2, n), name=name)


def example1():
    """x' = x y,  y' = -y + x^2."""
    return _system("example1", 1, 1, [{(1, 1): 1.0}], [{(0, 1): -1.0, (2, 0): 1.0}])


def example2():
    """x' = -x y,  y' = x^2 - y - 2 y^2."""
    return _system("example2", 1, 1, [{(1, 1): -1.0}],
                   [{(2, 0): 1.0, (0, 1): -1.0, (0, 2): -2.0}])


def example3():
    """Rotation in the center plane coupled to one stable direction."""
    f1 = [{(0, 1, 0): -1.0, (1, 0, 1): 1.0}, {(1, 0, 0): 1.0, (0, 1, 1): 1.0}]
    f2 = [{(0, 0, 1): -1.0, (2, 0, 0): -1.0, (0, 2, 0): -1.0, (0, 0, 2): 1.0}]
    return _system("example3", 2, 1, f1, f2)


BUILTINS = {"example1": example1, "example2": example2, "example3": example3}


def load_system(path):
    with open(path) as fh:
        return SplitSystem.from_dict(json.load(fh))


def save_system(system, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(system.to_dict(), fh, indent=1)
        fh.write("\n")


def resolve_system(name_or_path):
    if name_or_path in BUILTINS:
        return BUILTINS[name_or_path]()
    return load_system(name_or_path)


def rhs_eval(system: SplitSystem, x, y):
    """Return ``(f1(x, y), f2(x, y))``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != system.d or y.size != system.m:
        raise InvalidArgument(f"expected x in R^{system.d} and y in R^{system.m}")
    z = np.concatenate([x, y])
    return system.f1.evaluate(z), system.f2.evaluate(z)


# -- Newton solve of one implicit Euler step -----------------------------------

def newton_implicit_euler(fun, jac, state, dt, newton_tol=NEWTON_TOL, max_newton_iter=MAX_NEWTON_ITER):
    """Solve ``w = state + dt fun(w)`` starting from ``w = state``.

    Returns ``(w, status, residual_norm)``; status is 0 on convergence,
    1 when the iteration budget ran out, 2 when the iterate left the reals.
    """
    z = np.asarray(state, dtype=float)
    w = z.copy()
    eye = np.eye(z.size)
    for _ in range(max_newton_iter):
        g = w - z - dt * fun(w)
        try:
            delta = np.linalg.solve(eye - dt * jac(w), g)
        except np.linalg.LinAlgError:
            delta = np.full_like(w, np.nan)
        w = w - delta
        if not np.all(np.isfinite(w)):
            return w, _NON_FINITE, float("nan")
        if np.linalg.norm(delta) <= newton_tol:
            return w, _OK, float(np.linalg.norm(w - z - dt * fun(w)))
    return w, _NOT_CONVERGED, float(np.linalg.norm(w - z - dt * fun(w)))


def implicit_euler_step(system: SplitSystem, state, dt, newton_tol=NEWTON_TOL,
                        max_newton_iter=MAX_NEWTON_ITER):
    """One implicit Euler step for the full system."""
    state = np.asarray(state, dtype=float).reshape(-1)
    if state.size != system.n:
        raise InvalidArgument(f"state must have length {system.n}")
    if not dt > 0 or not newton_tol > 0:
        raise InvalidArgument("dt and newton_tol must be positive")
    states, status, resid = _run(system, state, dt, 1, newton_tol, max_newton_iter, True)
    if status[-1] != _OK:
        raise StepFailure(f"Newton iteration failed (status {int(status[-1])}, "
                          f"residual {resid[-1]:.3e})", iterate=states[-1], residual=float(resid[-1]),
                          step_index=0)
    return states[-1].copy()


# -- trajectory kernels ----------------------------------------------------------
# Written in scalar form so the compiled and interpreted runs perform the same
# floating-point operations in the same order. Example 1 passes through a
# chaotic phase after Newton failures, and any reordering changes the data.

@njit(nogil=True)
def _ipow(x, e):
    r = 1.0
    for _ in range(e):
        r *= x
    return r


@njit(nogil=True)
def _field_eval_jac(exps, coefs, z, F, J):
    n_terms, n = exps.shape
    k = coefs.shape[1]
    for o in range(k):
        F[o] = 0.0
        for v in range(n):
            J[o, v] = 0.0
    for t in range(n_terms):
        mono = 1.0
        for v in range(n):
            if exps[t, v] > 0:
                mono *= _ipow(z[v], exps[t, v])
        for o in range(k):
            F[o] += coefs[t, o] * mono
        for v in range(n):
            e = exps[t, v]
            if e == 0:
                continue
            dm = e * _ipow(z[v], e - 1)
            for u in range(n):
                if u != v and exps[t, u] > 0:
                    dm *= _ipow(z[u], exps[t, u])
            for o in range(k):
                J[o, v] += coefs[t, o] * dm


@njit(nogil=True)
def _integrate(exps, coefs, z0, dt, nsteps, tol, maxit, stop_on_failure):
    n = z0.shape[0]
    states = np.zeros((nsteps + 1, n))
    status = np.zeros(nsteps + 1, dtype=np.int64)
    resid = np.zeros(nsteps + 1)
    for i in range(n):
        states[0, i] = z0[i]
    F = np.zeros(n)
    J = np.zeros((n, n))
    M = np.zeros((n, n))
    G = np.zeros(n)
    w = np.zeros(n)
    last = nsteps
    for s in range(1, nsteps + 1):
        for i in range(n):
            w[i] = states[s - 1, i]
        code = 1
        for it in range(maxit):
            _field_eval_jac(exps, coefs, w, F, J)
            for i in range(n):
                G[i] = w[i] - states[s - 1, i] - dt * F[i]
                for j in range(n):
                    M[i, j] = -dt * J[i, j]
                M[i, i] += 1.0
            delta = np.linalg.solve(M, G)
            nrm = 0.0
            finite = True
            for i in range(n):
                w[i] -= delta[i]
                nrm += delta[i] * delta[i]
                if not np.isfinite(w[i]):
                    finite = False
            if not finite:
                code = 2
                break
            if math.sqrt(nrm) <= tol:
                code = 0
                break
        _field_eval_jac(exps, coefs, w, F, J)
        r = 0.0
        for i in range(n):
            g = w[i] - states[s - 1, i] - dt * F[i]
            r += g * g
            states[s, i] = w[i]
        status[s] = code
        resid[s] = math.sqrt(r)
        if code == 2 or (code == 1 and stop_on_failure):
            last = s
            break
    return states[: last + 1], status[: last + 1], resid[: last + 1]


def _kernel(fn):
    """Compiled kernel, or the plain Python function when numba is off."""
    return fn if accel.NUMBA_ENABLED else getattr(fn, "py_func", fn)


def _run(system, z0, dt, nsteps, newton_tol, max_newton_iter, stop):
    fld = system.field
    return _kernel(_integrate)(fld.exponents, fld.coefficients, z0, float(dt), int(nsteps),
                               float(newton_tol), int(max_newton_iter), bool(stop))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    failed_steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.states))


def num_steps(t0, T, dt):
    if not T >= t0:
        raise InvalidArgument("need T >= t0")
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    return int(math.floor((T - t0) / dt + 1e-9))


def simulate_trajectory(system: SplitSystem, initial, t0, T, dt, newton_tol=NEWTON_TOL,
                        max_newton_iter=MAX_NEWTON_ITER, on_failure="raise"):
    """Integrate from ``initial`` over ``floor((T - t0) / dt)`` steps.

    ``on_failure="continue"`` accepts the last Newton iterate when a step
    does not converge and records the step index in ``failed_steps``;
    ``"raise"`` raises :class:`StepFailure`. Non-finite iterates always raise.
    """
    if on_failure not in ("raise", "continue"):
        raise InvalidArgument("on_failure must be 'raise' or 'continue'")
    z0 = np.asarray(initial, dtype=float).reshape(-1)
    if z0.size != system.n:
        raise InvalidArgument(f"initial state must have length {system.n}")
    nsteps = num_steps(t0, T, dt)
    stop = on_failure == "raise"
    states, status, resid = _run(system, z0, dt, nsteps, newton_tol, max_newton_iter, stop)
    bad = np.flatnonzero(status != _OK)
    if bad.size and (stop or status[bad[-1]] == _NON_FINITE):
        k = int(bad[0] if stop else bad[-1])
        raise StepFailure(f"implicit Euler step {k} failed (status {int(status[k])}, "
                          f"residual {resid[k]:.3e})", iterate=states[k], residual=float(resid[k]),
                          step_index=k)
    times = t0 + dt * np.arange(nsteps + 1)
    return Trajectory(times, states, [int(k) for k in bad])


# -- training data -----------------------------------------------------------------

def box(half_width, d):
    """Symmetric box ``[-h, h]^d`` as a ``(d, 2)`` array."""
    return np.tile([-float(half_width), float(half_width)], (d, 1))


def initial_grid(magnitude, n):
    """The ``2^n`` corners ``{+mag, -mag}^n``."""
    return [np.array(c) for c in itertools.product((magnitude, -magnitude), repeat=n)]


def in_box(X, domain_box):
    X = np.atleast_2d(X)
    lo, hi = domain_box[:, 0], domain_box[:, 1]
    return np.all((X >= lo) & (X <= hi), axis=1)


@dataclass
class TrajectoryDataset:
    times: np.ndarray
    x_points: np.ndarray
    y_points: np.ndarray
    domain_box: np.ndarray
    provenance: dict = field(default_factory=dict)
    trajectory_index: np.ndarray | None = None
    step_index: np.ndarray | None = None

    def __post_init__(self):
        if len(self.x_points) != len(self.y_points) or len(self.times) != len(self.x_points):
            raise InvalidArgument("times, x_points and y_points must have equal length")

    def __len__(self):
        return len(self.x_points)

    @property
    def d(self):
        return self.x_points.shape[1]

    @property
    def m(self):
        return self.y_points.shape[1]


def build_dataset(system: SplitSystem, initial_grid, t0, T, dt, domain_box,
                  newton_tol=NEWTON_TOL, max_newton_iter=MAX_NEWTON_ITER,
                  on_failure="raise", workers=1):
    """Simulate every initial state and keep the pairs whose x lies in the box.

    Order of the result follows the initial grid, then time. The initial
    state of every trajectory is a candidate pair as well.
    """
    grid = [np.asarray(g, dtype=float) for g in initial_grid]
    if not grid:
        raise InvalidArgument("initial_grid must not be empty")
    domain_box = np.asarray(domain_box, dtype=float).reshape(system.d, 2)

    def run(idx):
        try:
            return simulate_trajectory(system, grid[idx], t0, T, dt, newton_tol,
                                       max_newton_iter, on_failure)
        except StepFailure as exc:
            exc.trajectory = idx
            raise

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(run, range(len(grid))))
    else:
        trajs = [run(i) for i in range(len(grid))]

    times, xs, ys, tidx, sidx, per_traj = [], [], [], [], [], []
    for i, tr in enumerate(trajs):
        keep = in_box(tr.states[:, : system.d], domain_box)
        idx = np.flatnonzero(keep)
        times.append(tr.times[idx])
        xs.append(tr.states[idx, : system.d])
        ys.append(tr.states[idx, system.d:])
        tidx.append(np.full(idx.size, i))
        sidx.append(idx)
        per_traj.append({"initial": [float(v) for v in grid[i]], "raw": len(tr),
                         "retained": int(idx.size), "newton_failures": len(tr.failed_steps)})
    provenance = {
        "system": system.name,
        "t0": float(t0), "T": float(T), "dt": float(dt),
        "newton_tol": float(newton_tol), "max_newton_iter": int(max_newton_iter),
        "on_failure": on_failure,
        "domain_box": domain_box.tolist(),
        "boundary_rule": "closed",
        "initial_state_stored": True,
        "raw_count": int(sum(p["raw"] for p in per_traj)),
        "retained_count": int(sum(p["retained"] for p in per_traj)),
        "trajectories": per_traj,
    }
    return TrajectoryDataset(
        times=np.concatenate(times),
        x_points=np.concatenate(xs).reshape(-1, system.d),
        y_points=np.concatenate(ys).reshape(-1, system.m),
        domain_box=domain_box,
        provenance=provenance,
        trajectory_index=np.concatenate(tidx),
        step_index=np.concatenate(sidx),
    )
