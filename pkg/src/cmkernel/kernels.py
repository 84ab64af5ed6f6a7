"""Scalar kernels with closed-form derivatives.

Two families are supported::

    polynomial   k(x, y) = (1 + c <x, y>)^p
    gaussian     k(x, y) = exp(-a |x - y|^2)

Matrix-valued kernels are the separable lift ``K(x, y) = k(x, y) I_m``, so
every block the regression needs is a scalar quantity from this module
times an identity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

POLYNOMIAL = "polynomial"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class KernelSpec:
    family: str
    degree: int = 4
    inner_scale: float = 0.5
    shape: float = 0.5
    input_dim: int | None = None

    def __post_init__(self):
        if self.family not in (POLYNOMIAL, GAUSSIAN):
            raise InvalidArgument(f"unknown kernel family {self.family!r}")
        if self.family == POLYNOMIAL:
            if int(self.degree) != self.degree or self.degree < 1:
                raise InvalidArgument("polynomial degree must be a positive integer")
            if not self.inner_scale > 0:
                raise InvalidArgument("inner_scale must be positive")
        elif not self.shape > 0:
            raise InvalidArgument("gaussian shape must be positive")
        if self.input_dim is not None and self.input_dim < 1:
            raise InvalidArgument("input_dim must be positive")

    @classmethod
    def polynomial(cls, degree=4, inner_scale=0.5, input_dim=None):
        return cls(POLYNOMIAL, degree=int(degree), inner_scale=float(inner_scale), input_dim=input_dim)

    @classmethod
    def gaussian(cls, shape=0.5, input_dim=None):
        return cls(GAUSSIAN, shape=float(shape), input_dim=input_dim)

    def with_dim(self, d):
        return KernelSpec(self.family, self.degree, self.inner_scale, self.shape, int(d))

    @property
    def family_code(self):
        return 0 if self.family == POLYNOMIAL else 1

    def to_dict(self):
        if self.family == POLYNOMIAL:
            return {"family": POLYNOMIAL, "degree": self.degree, "inner_scale": self.inner_scale}
        return {"family": GAUSSIAN, "shape": self.shape}

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data, input_dim=None):
        family = data.get("family")
        if family == POLYNOMIAL:
            return cls.polynomial(data.get("degree", 4), data.get("inner_scale", 0.5), input_dim)
        if family == GAUSSIAN:
            return cls.gaussian(data.get("shape", 0.5), input_dim)
        raise InvalidArgument(f"unknown kernel family {family!r}")

    def cli_string(self):
        if self.family == POLYNOMIAL:
            return f"poly:{self.degree}:{self.inner_scale!r}"
        return f"gauss:{self.shape!r}"


def parse_kernel(text, input_dim=None):
    """Parse the CLI form ``poly:DEG:SCALE`` or ``gauss:SHAPE``.

    The aliases ``k1`` (= ``poly:4:0.5``) and ``k2`` (= ``gauss:0.5``)
    are accepted too.
    """
    text = text.strip()
    if text == "k1":
        return KernelSpec.polynomial(4, 0.5, input_dim)
    if text == "k2":
        return KernelSpec.gaussian(0.5, input_dim)
    parts = text.split(":")
    try:
        if parts[0] in ("poly", "polynomial") and len(parts) == 3:
            return KernelSpec.polynomial(int(parts[1]), float(parts[2]), input_dim)
        if parts[0] in ("gauss", "gaussian") and len(parts) == 2:
            return KernelSpec.gaussian(float(parts[1]), input_dim)
    except ValueError as exc:
        raise InvalidArgument(f"cannot parse kernel {text!r}: {exc}") from None
    raise InvalidArgument(f"cannot parse kernel {text!r}; use poly:DEG:SCALE or gauss:SHAPE")


def _pair(spec, x, y):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise InvalidArgument(f"dimension mismatch: {x.size} vs {y.size}")
    if spec.input_dim is not None and x.size != spec.input_dim:
        raise InvalidArgument(f"expected vectors of length {spec.input_dim}, got {x.size}")
    return x, y


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x, y = _pair(spec, x, y)
    if spec.family == POLYNOMIAL:
        return float((1.0 + spec.inner_scale * (x @ y)) ** spec.degree)
    r = x - y
    return float(np.exp(-spec.shape * (r @ r)))


def kernel_grad_second(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``k(x, y)`` with respect to ``y``."""
    x, y = _pair(spec, x, y)
    if spec.family == POLYNOMIAL:
        p, c = spec.degree, spec.inner_scale
        return p * c * x * (1.0 + c * (x @ y)) ** (p - 1)
    r = x - y
    return 2.0 * spec.shape * r * np.exp(-spec.shape * (r @ r))


def kernel_grad_first(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``k(x, y)`` with respect to ``x``."""
    x, y = _pair(spec, x, y)
    return kernel_grad_second(spec, y, x)


def kernel_mixed_hessian(spec: KernelSpec, x, y) -> np.ndarray:
    """Matrix with entry ``(i, j) = d^2 k / dx_i dy_j``."""
    x, y = _pair(spec, x, y)
    d = x.size
    if spec.family == POLYNOMIAL:
        p, c = spec.degree, spec.inner_scale
        u = 1.0 + c * (x @ y)
        hess = p * c * u ** (p - 1) * np.eye(d)
        if p >= 2:
            hess += p * (p - 1) * c * c * u ** (p - 2) * np.outer(y, x)
        return hess
    a = spec.shape
    r = x - y
    k = np.exp(-a * (r @ r))
    return k * (2.0 * a * np.eye(d) - 4.0 * a * a * np.outer(r, r))


# Batched forms. Rows of X are points; results are float arrays.

def _points(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    X = _points(X)
    Y = X if Y is None else _points(Y)
    if X.shape[1] != Y.shape[1]:
        raise InvalidArgument("dimension mismatch between point sets")
    if spec.family == POLYNOMIAL:
        return (1.0 + spec.inner_scale * (X @ Y.T)) ** spec.degree
    # direct differences keep k(x, x) exactly 1 and avoid cancellation
    sq = np.zeros((X.shape[0], Y.shape[0]))
    for j in range(X.shape[1]):
        sq += (X[:, j, None] - Y[None, :, j]) ** 2
    return np.exp(-spec.shape * sq)


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    X = _points(X)
    if spec.family == POLYNOMIAL:
        return (1.0 + spec.inner_scale * np.sum(X * X, axis=1)) ** spec.degree
    return np.ones(X.shape[0])


def grad_second_rows(spec: KernelSpec, X, y) -> np.ndarray:
    """Row ``i`` is ``d k / dy (X_i, y)``."""
    X = _points(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if spec.family == POLYNOMIAL:
        p, c = spec.degree, spec.inner_scale
        return p * c * X * ((1.0 + c * (X @ y)) ** (p - 1))[:, None]
    R = X - y
    return 2.0 * spec.shape * R * np.exp(-spec.shape * np.sum(R * R, axis=1))[:, None]


def grad_first_rows(spec: KernelSpec, x, Y) -> np.ndarray:
    """Row ``i`` is ``d k / dx (x, Y_i)``."""
    return grad_second_rows(spec, Y, x)
