"""Multivariate polynomials.

``PolynomialField`` is the vector-valued right-hand side used by the
integrator; it keeps its terms as dense arrays so the compiled kernels can
consume them. The free functions below implement truncated arithmetic on
scalar polynomials stored as ``{exponent tuple: coefficient}`` dicts, which
is all the Taylor oracle needs.
"""
from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np

from .errors import InvalidArgument


class PolynomialField:
    """Polynomial map ``R^n -> R^k`` given as a list of terms.

    Parameters
    ----------
    terms : iterable of (exponents, coefficients)
        ``exponents`` has length ``n_vars``; ``coefficients`` has length
        ``n_out``. Terms with equal exponents are merged.
    n_vars, n_out : int
    """

    def __init__(self, terms, n_vars, n_out):
        self.n_vars = int(n_vars)
        self.n_out = int(n_out)
        merged = {}
        for exps, coefs in terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.n_vars:
                raise InvalidArgument(f"exponent {exps} does not have {self.n_vars} entries")
            if any(e < 0 for e in exps):
                raise InvalidArgument(f"negative exponent in {exps}")
            coefs = np.asarray(coefs, dtype=float).reshape(-1)
            if coefs.size != self.n_out:
                raise InvalidArgument(f"coefficient vector must have {self.n_out} entries")
            if exps in merged:
                merged[exps] = merged[exps] + coefs
            else:
                merged[exps] = coefs.copy()
        keys = sorted(merged)
        self.exponents = np.array(keys, dtype=np.int64).reshape(len(keys), self.n_vars)
        self.coefficients = np.array([merged[k] for k in keys], dtype=float).reshape(len(keys), self.n_out)

    @classmethod
    def from_components(cls, components, n_vars):
        """Build from one ``{exponents: coefficient}`` dict per output."""
        terms = []
        for i, comp in enumerate(components):
            for exps, c in comp.items():
                vec = np.zeros(len(components))
                vec[i] = c
                terms.append((exps, vec))
        return cls(terms, n_vars, len(components))

    @property
    def terms(self):
        return [(tuple(int(e) for e in ex), co.copy()) for ex, co in zip(self.exponents, self.coefficients)]

    def __call__(self, z):
        return self.evaluate(z)

    def evaluate(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.n_vars:
            raise InvalidArgument(f"expected state of length {self.n_vars}, got {z.size}")
        if not len(self.exponents):
            return np.zeros(self.n_out)
        mono = np.prod(z[None, :] ** self.exponents, axis=1)
        return mono @ self.coefficients

    def jacobian(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.n_vars:
            raise InvalidArgument(f"expected state of length {self.n_vars}, got {z.size}")
        jac = np.zeros((self.n_out, self.n_vars))
        if not len(self.exponents):
            return jac
        for v in range(self.n_vars):
            e = self.exponents[:, v]
            lowered = self.exponents.copy()
            lowered[:, v] = np.maximum(e - 1, 0)
            dmono = e * np.prod(z[None, :] ** lowered, axis=1)
            jac[:, v] = dmono @ self.coefficients
        return jac

    def component(self, i):
        """Output ``i`` as a scalar polynomial dict."""
        return {tuple(int(e) for e in ex): float(co[i])
                for ex, co in zip(self.exponents, self.coefficients) if co[i] != 0.0}

    def linear_part(self):
        """Jacobian at the origin, read off the degree-one terms."""
        mat = np.zeros((self.n_out, self.n_vars))
        for ex, co in zip(self.exponents, self.coefficients):
            if ex.sum() == 1:
                mat[:, int(np.argmax(ex))] += co
        return mat

    def constant_part(self):
        out = np.zeros(self.n_out)
        for ex, co in zip(self.exponents, self.coefficients):
            if ex.sum() == 0:
                out += co
        return out

    def to_dict(self):
        return {
            "n_vars": self.n_vars,
            "n_out": self.n_out,
            "terms": [{"exponents": [int(e) for e in ex], "coefficients": [float(c) for c in co]}
                      for ex, co in zip(self.exponents, self.coefficients)],
        }

    def __eq__(self, other):
        return (isinstance(other, PolynomialField) and self.n_vars == other.n_vars
                and self.n_out == other.n_out
                and np.array_equal(self.exponents, other.exponents)
                and np.array_equal(self.coefficients, other.coefficients))

    def __repr__(self):
        return f"PolynomialField(n_vars={self.n_vars}, n_out={self.n_out}, terms={len(self.exponents)})"


# -- truncated scalar polynomial arithmetic ------------------------------------

def monomials(n_vars, degree):
    """All exponent tuples of total degree ``degree``, in a fixed order."""
    out = []
    for combo in combinations_with_replacement(range(n_vars), degree):
        exps = [0] * n_vars
        for v in combo:
            exps[v] += 1
        out.append(tuple(exps))
    return out


def p_add(a, b, scale=1.0):
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + scale * v
    return out


def p_scale(a, s):
    return {k: s * v for k, v in a.items()}


def p_mul(a, b, max_degree):
    out = {}
    for ka, va in a.items():
        da = sum(ka)
        for kb, vb in b.items():
            if da + sum(kb) > max_degree:
                continue
            key = tuple(i + j for i, j in zip(ka, kb))
            out[key] = out.get(key, 0.0) + va * vb
    return out


def p_pow(a, e, n_vars, max_degree):
    out = {(0,) * n_vars: 1.0}
    for _ in range(e):
        out = p_mul(out, a, max_degree)
    return out


def p_deriv(a, var):
    out = {}
    for k, v in a.items():
        if k[var] == 0:
            continue
        key = list(k)
        key[var] -= 1
        key = tuple(key)
        out[key] = out.get(key, 0.0) + k[var] * v
    return out


def p_degree_part(a, degree):
    return {k: v for k, v in a.items() if sum(k) == degree}


def p_eval(a, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    total = 0.0
    for k, v in a.items():
        total += v * np.prod(x ** np.array(k))
    return float(total)


def substitute(comp, d, h_polys, max_degree):
    """Compose a polynomial in ``(x, y)`` with ``y = h(x)``, truncated.

    ``comp`` is a dict over ``d + m`` variables, ``h_polys`` a list of ``m``
    dicts over ``d`` variables. Returns a dict over the ``d`` x-variables.
    """
    out = {}
    cache = {}
    for exps, c in comp.items():
        xpart = exps[:d]
        term = {tuple(xpart): c}
        if sum(xpart) > max_degree:
            continue
        for j, e in enumerate(exps[d:]):
            if e == 0:
                continue
            if (j, e) not in cache:
                cache[(j, e)] = p_pow(h_polys[j], e, d, max_degree)
            term = p_mul(term, cache[(j, e)], max_degree)
        out = p_add(out, term)
    return out
