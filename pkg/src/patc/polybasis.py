"""Orthonormal univariate polynomial families for probability measures.

Each family is orthonormal (not merely orthogonal) under its weight taken as
a probability density: standard normal (Hermite), uniform on [-1, 1]
(Legendre), beta on [-1, 1] (Jacobi), exponential (Laguerre) and gamma
(generalized Laguerre). Values come from the three-term recurrence with
on-the-fly normalization; Gauss rules from the Golub-Welsch eigenproblem of
the same recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "PolyFamily",
    "hermite",
    "legendre",
    "jacobi",
    "laguerre",
    "generalized_laguerre",
    "eval_basis",
    "gauss_rule",
    "gram_check",
]


def _recurrence(kind: str, params: tuple, m: int):
    """Monic three-term recurrence coefficients (a_k, b_k), k = 0..m-1, for
    the probability-normalized weight (b_0 = 1)."""
    k = np.arange(m, dtype=float)
    if kind == "hermite":
        a = np.zeros(m)
        b = k.copy()
    elif kind == "legendre":
        a = np.zeros(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            b = k * k / (4.0 * k * k - 1.0)
    elif kind == "jacobi":
        al, be = params
        apb = al + be
        a = np.empty(m)
        b = np.empty(m)
        a[0] = (be - al) / (apb + 2.0)
        if m > 1:
            kk = k[1:]
            a[1:] = (be * be - al * al) / ((2.0 * kk + apb) * (2.0 * kk + apb + 2.0))
            b[1] = 4.0 * (al + 1.0) * (be + 1.0) / ((apb + 2.0) ** 2 * (apb + 3.0))
        if m > 2:
            kk = k[2:]
            b[2:] = (
                4.0
                * kk
                * (kk + al)
                * (kk + be)
                * (kk + apb)
                / ((2.0 * kk + apb) ** 2 * ((2.0 * kk + apb) ** 2 - 1.0))
            )
    elif kind == "laguerre":
        a = 2.0 * k + 1.0
        b = k * k
    elif kind == "generalized_laguerre":
        (al,) = params
        a = 2.0 * k + al + 1.0
        b = k * (k + al)
    else:
        raise ValueError(f"unknown polynomial family {kind!r}")
    b[0] = 1.0
    return a, b


@dataclass(frozen=True)
class PolyFamily:
    """Orthonormal polynomial family up to `max_degree` with psi_0 = 1."""

    kind: str
    params: tuple = ()
    max_degree: int = 10
    _coeffs: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.max_degree < 0:
            raise ValueError("max_degree must be >= 0")
        if self.kind == "jacobi" and (self.params[0] <= -1.0 or self.params[1] <= -1.0):
            raise ValueError("Jacobi parameters must exceed -1")
        if self.kind == "generalized_laguerre" and self.params[0] <= -1.0:
            raise ValueError("generalized Laguerre parameter must exceed -1")
        a, b = _recurrence(self.kind, self.params, self.max_degree + 1)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError(f"non-finite recurrence coefficients for {self.kind}{self.params}")
        object.__setattr__(self, "_coeffs", (a, np.sqrt(b)))

    @property
    def support(self) -> tuple[float, float]:
        return {
            "hermite": (-np.inf, np.inf),
            "legendre": (-1.0, 1.0),
            "jacobi": (-1.0, 1.0),
            "laguerre": (0.0, np.inf),
            "generalized_laguerre": (0.0, np.inf),
        }[self.kind]

    def truncated(self, degree: int) -> "PolyFamily":
        return PolyFamily(self.kind, self.params, degree)


def hermite(max_degree: int = 10) -> PolyFamily:
    return PolyFamily("hermite", (), max_degree)


def legendre(max_degree: int = 10) -> PolyFamily:
    return PolyFamily("legendre", (), max_degree)


def jacobi(alpha: float, beta: float, max_degree: int = 10) -> PolyFamily:
    return PolyFamily("jacobi", (float(alpha), float(beta)), max_degree)


def laguerre(max_degree: int = 10) -> PolyFamily:
    return PolyFamily("laguerre", (), max_degree)


def generalized_laguerre(alpha: float, max_degree: int = 10) -> PolyFamily:
    return PolyFamily("generalized_laguerre", (float(alpha),), max_degree)


def eval_basis(fam: PolyFamily, x, degree: int | None = None) -> np.ndarray:
    """Orthonormal basis values [psi_0(x), ..., psi_p(x)].

    Vectorized: scalar x gives shape (p+1,), an array gives (len(x), p+1).
    """
    p = fam.max_degree if degree is None else degree
    if p > fam.max_degree:
        fam = fam.truncated(p)
    a, sqrt_b = fam._coeffs
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((x_arr.size, p + 1))
    out[:, 0] = 1.0
    if p >= 1:
        out[:, 1] = (x_arr - a[0]) / sqrt_b[1]
    for k in range(1, p):
        out[:, k + 1] = ((x_arr - a[k]) * out[:, k] - sqrt_b[k] * out[:, k - 1]) / sqrt_b[k + 1]
    return out[0] if np.isscalar(x) or np.ndim(x) == 0 else out


def gauss_rule(fam: PolyFamily, order: int):
    """Gauss nodes and weights for the family's probability measure."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    a, b = _recurrence(fam.kind, fam.params, order)
    nodes, vecs = eigh_tridiagonal(a, np.sqrt(b[1:order]))
    weights = vecs[0, :] ** 2  # b_0 = 1: weights sum to one
    return nodes, weights


def gram_check(fam: PolyFamily, quad_order: int | None = None) -> float:
    """Max |<psi_j, psi_k> - delta_jk| over the family by its own Gauss rule.

    The default order integrates products up to degree 2p exactly.
    """
    p = fam.max_degree
    order = quad_order if quad_order is not None else p + 1
    if order < p + 1:
        raise ValueError("quadrature order must be at least max_degree + 1")
    x, w = gauss_rule(fam, order)
    psi = eval_basis(fam, x)
    gram = (psi * w[:, None]).T @ psi
    return float(np.max(np.abs(gram - np.eye(p + 1))))
