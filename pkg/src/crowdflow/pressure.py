"""Singular congestion pressure and its energy potentials.

The mixture is kept below the congestion ratio z = 1 by a barrier pressure

    p(z) = epsilon * z**alpha / (1 - z)**beta,      0 <= z < 1,

which blows up at z = 1.  Time stepping never touches the barrier directly:
it evaluates a truncated law that follows the barrier on [0, 1 - delta] and
continues past the truncation point with a finite polynomial branch, so every
evaluation stays finite even when a step overshoots.

Potentials are the Helmholtz-type primitives z * int_0^z p(s)/s^2 ds used by
the energy ledger; the singular part tracks how much of the potential comes
from the barrier alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError

# Relative tolerance for adaptive quadrature fallbacks (non-default alpha).
_QUAD_RTOL = 1e-10
# Integrands with alpha < 2 are singular at 0; below this point the
# leading-order antiderivative is used instead of quadrature.
_SINGULAR_SPLIT = 1e-6


@dataclass(frozen=True)
class PressureParams:
    """Constants of the barrier law and its truncation.

    Parameters
    ----------
    epsilon : float
        Barrier stiffness, > 0.  Continuation drivers sweep this down.
    delta : float
        Truncation width in [0, 1).  0 leaves the law untruncated and is
        only acceptable for diagnostics; stepping requires delta > 0.
    alpha : float
        Low-density exponent, > 1.  Controls behaviour near vacuum.
    beta : float
        Barrier exponent, > 2.  Two space dimensions need beta > 2 and
        three would need beta > 5/2; the validator enforces the bound for
        the mesh actually in use and reports which reading applied.
    gamma : float
        Growth exponent of the polynomial branch past 1 - delta.  Must
        exceed the spatial dimension; checked at validation time.
    """

    epsilon: float = 0.1
    delta: float = 0.0
    alpha: float = 2.0
    beta: float = 3.0
    gamma: float = 6.0

    def __post_init__(self):
        if not (self.epsilon > 0.0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if not (self.alpha > 1.0):
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if not (self.beta > 2.0):
            raise ValueError(f"beta must be > 2, got {self.beta}")
        if not (self.gamma > 1.0):
            raise ValueError(f"gamma must be > 1, got {self.gamma}")

    @property
    def branch_point(self) -> float:
        """Congestion ratio where the truncated law leaves the barrier."""
        return 1.0 - self.delta


def _as_array(z):
    # always at least 1-d: 0-d arrays take numpy's scalar power kernel,
    # which rounds differently from the vector loop, and the two-branch
    # laws must evaluate bitwise identically for scalars and arrays
    arr = np.asarray(z, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _ret(arr, scalar):
    return float(arr[0]) if scalar else arr


def singular_pressure(z, p: PressureParams):
    """Barrier pressure epsilon * z**alpha / (1 - z)**beta.

    Parameters
    ----------
    z : array_like
        Congestion ratio, must satisfy 0 <= z < 1 elementwise.
    p : PressureParams

    Returns
    -------
    float or ndarray
        Pressure values; 0 exactly at z = 0, strictly increasing.
    """
    arr, scalar = _as_array(z)
    if np.any(arr < 0.0) or np.any(arr >= 1.0):
        raise DomainError("singular pressure needs 0 <= z < 1")
    out = p.epsilon * arr**p.alpha / (1.0 - arr) ** p.beta
    return _ret(out, scalar)


def truncated_pressure(z, p: PressureParams):
    """Finite continuation of the barrier past z = 1 - delta.

    Follows the barrier exactly on [0, 1 - delta] and switches to

        p(1 - delta) + epsilon * (z - 1 + delta)**gamma

    beyond, so the law is defined and increasing for every z >= 0.  The two
    branches agree exactly at the branch point.
    """
    if p.delta <= 0.0:
        raise DomainError("truncated pressure needs delta > 0")
    arr, scalar = _as_array(z)
    if np.any(arr < 0.0):
        raise DomainError("truncated pressure needs z >= 0")
    a = p.branch_point
    out = np.empty_like(arr)
    low = arr <= a
    out[low] = p.epsilon * arr[low] ** p.alpha / (1.0 - arr[low]) ** p.beta
    hi = ~low
    if np.any(hi):
        base = p.epsilon * a**p.alpha / (1.0 - a) ** p.beta
        out[hi] = base + p.epsilon * (arr[hi] - a) ** p.gamma
    return _ret(out, scalar)


def pressure_derivative(z, p: PressureParams, *, truncated: bool = False):
    """d/dz of the barrier law or of its truncation.

    The barrier branch uses the closed form

        eps * z**(alpha-1) * (1-z)**(-beta-1) * (alpha*(1-z) + beta*z),

    which is >= 0 on the domain and 0 at z = 0 when alpha > 1.
    """
    arr, scalar = _as_array(z)
    if np.any(arr < 0.0):
        raise DomainError("pressure derivative needs z >= 0")
    if not truncated:
        if np.any(arr >= 1.0):
            raise DomainError("barrier derivative needs z < 1")
        out = (
            p.epsilon
            * arr ** (p.alpha - 1.0)
            * (1.0 - arr) ** (-p.beta - 1.0)
            * (p.alpha * (1.0 - arr) + p.beta * arr)
        )
        return _ret(out, scalar)
    if p.delta <= 0.0:
        raise DomainError("truncated derivative needs delta > 0")
    a = p.branch_point
    out = np.empty_like(arr)
    low = arr <= a
    zl = arr[low]
    out[low] = (
        p.epsilon
        * zl ** (p.alpha - 1.0)
        * (1.0 - zl) ** (-p.beta - 1.0)
        * (p.alpha * (1.0 - zl) + p.beta * zl)
    )
    hi = ~low
    if np.any(hi):
        out[hi] = p.epsilon * p.gamma * (arr[hi] - a) ** (p.gamma - 1.0)
    return _ret(out, scalar)


def _barrier_primitive(z, p: PressureParams):
    """int_0^z p_barrier(s) / s**2 ds, elementwise.

    Closed form for alpha = 2; adaptive quadrature otherwise, splitting off
    the weakly singular head for alpha < 2.
    """
    arr, scalar = _as_array(z)
    if p.alpha == 2.0:
        out = p.epsilon * ((1.0 - arr) ** (1.0 - p.beta) - 1.0) / (p.beta - 1.0)
        return _ret(out, scalar)

    def integrand(s):
        return s ** (p.alpha - 2.0) * (1.0 - s) ** (-p.beta)

    def one(zv):
        if zv == 0.0:
            return 0.0
        lo = 0.0
        head = 0.0
        if p.alpha < 2.0 and zv > _SINGULAR_SPLIT:
            # series head: s**(alpha-2) * (1 + beta*s + beta*(beta+1)/2 * s**2)
            # integrated exactly on [0, split]; the dropped term is O(split**3)
            t, a, b = _SINGULAR_SPLIT, p.alpha, p.beta
            head = (
                t ** (a - 1.0) / (a - 1.0)
                + b * t**a / a
                + 0.5 * b * (b + 1.0) * t ** (a + 1.0) / (a + 1.0)
            )
            lo = _SINGULAR_SPLIT
        val, _ = quad(integrand, lo, zv, epsrel=_QUAD_RTOL, epsabs=0.0, limit=200)
        return p.epsilon * (head + val)

    out = np.vectorize(one, otypes=[float])(arr)
    return _ret(out, scalar)


def energy_potential(z, p: PressureParams):
    """Potential z * int_0^z p(s)/s**2 ds of the barrier law.

    Satisfies z * H'(z) - H(z) = p(z) and H(0) = 0; convex on [0, 1).
    """
    arr, scalar = _as_array(z)
    if np.any(arr < 0.0) or np.any(arr >= 1.0):
        raise DomainError("barrier potential needs 0 <= z < 1")
    out = arr * np.asarray(_barrier_primitive(arr, p))
    return _ret(out, scalar)


def _poly_branch_primitive(z, p: PressureParams):
    """int_a^z (s - a)**gamma / s**2 ds with a = 1 - delta, for z >= a.

    Binomial expansion when gamma is an integer (the shipped default), an
    adaptive quadrature fallback otherwise.
    """
    a = p.branch_point
    arr, scalar = _as_array(z)
    g = p.gamma
    if abs(g - round(g)) < 1e-12:
        n = int(round(g))
        out = np.zeros_like(arr)
        for k in range(n + 1):
            coeff = _binom(n, k) * (-a) ** (n - k)
            if k == 0:
                term = 1.0 / a - 1.0 / arr
            elif k == 1:
                term = np.log(arr / a)
            else:
                term = (arr ** (k - 1) - a ** (k - 1)) / (k - 1)
            out += coeff * term
        return _ret(out, scalar)

    def one(zv):
        val, _ = quad(
            lambda s: (s - a) ** g / s**2, a, zv, epsrel=_QUAD_RTOL, epsabs=0.0
        )
        return val

    out = np.vectorize(one, otypes=[float])(arr)
    return _ret(out, scalar)


def _binom(n, k):
    from math import comb

    return float(comb(n, k))


def truncated_energy_potential(z, p: PressureParams):
    """Potential of the truncated law, finite for every z >= 0.

    Equals the barrier potential on [0, 1 - delta]; past the branch point
    the primitive splits into the frozen barrier part plus the polynomial
    continuation.  The identity z * H'(z) - H(z) = p_trunc(z) holds on both
    branches by construction.
    """
    if p.delta <= 0.0:
        raise DomainError("truncated potential needs delta > 0")
    arr, scalar = _as_array(z)
    if np.any(arr < 0.0):
        raise DomainError("truncated potential needs z >= 0")
    a = p.branch_point
    out = np.empty_like(arr)
    low = arr <= a
    out[low] = np.asarray(arr[low] * np.asarray(_barrier_primitive(arr[low], p)))
    hi = ~low
    if np.any(hi):
        zh = arr[hi]
        head = _barrier_primitive(a, p)
        base = p.epsilon * a**p.alpha / (1.0 - a) ** p.beta
        mid = base * (1.0 / a - 1.0 / zh)
        tail = p.epsilon * np.asarray(_poly_branch_primitive(zh, p))
        out[hi] = zh * (head + mid + tail)
    return _ret(out, scalar)


def singular_energy_part(z, p: PressureParams):
    """Barrier share of the potential: epsilon * (1 - z)**(1 - beta) capped.

    On [0, 1 - delta] this is the pure barrier expression; past the branch
    point it continues linearly with the frozen slope epsilon * delta**(-beta)
    so the function stays finite and continuous.  Its mass controls how close
    a state sits to full congestion.
    """
    if p.delta <= 0.0:
        raise DomainError("singular energy part needs delta > 0")
    arr, scalar = _as_array(z)
    if np.any(arr < 0.0):
        raise DomainError("singular energy part needs z >= 0")
    a = p.branch_point
    out = np.empty_like(arr)
    low = arr <= a
    out[low] = p.epsilon * (1.0 - arr[low]) ** (1.0 - p.beta)
    hi = ~low
    if np.any(hi):
        level = p.epsilon * p.delta ** (1.0 - p.beta)
        slope = p.epsilon * p.delta ** (-p.beta)
        out[hi] = level + slope * (arr[hi] - a)
    return _ret(out, scalar)


def sound_speed(rho, z, p: PressureParams):
    """Characteristic speed sqrt(p'(z) * z / rho) of the pressure wave.

    Uses the truncated derivative whenever a truncation is configured, the
    barrier derivative otherwise.  Explicit time stepping adds this to the
    transport speed.
    """
    r_arr, scalar_r = _as_array(rho)
    z_arr, scalar_z = _as_array(z)
    if np.any(r_arr <= 0.0):
        raise DomainError("sound speed needs rho > 0")
    dp = pressure_derivative(z_arr, p, truncated=p.delta > 0.0)
    out = np.sqrt(np.asarray(dp) * z_arr / r_arr)
    return _ret(out, scalar_r and scalar_z)
