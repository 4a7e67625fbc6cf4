"""Complete elliptic integrals and Jacobi functions for parameter m < 1.

Everything here works directly with negative parameter through the
arithmetic-geometric mean, so no reciprocal-modulus bookkeeping is needed.
The profile constants of the unperturbed solution are collected in
:class:`EllipticParams`.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NonConvergenceError, RootNotBracketedError

_MAX_AGM_STEPS = 64


def _agm_sequence(m, tol):
    """Return the AGM lists ``a_n`` and ``c_n`` started from (1, sqrt(1-m)).

    ``c[0]`` holds ``m`` itself (the square of the first term), so that the
    sum used for E stays real when m is negative.
    """
    a, b = 1.0, math.sqrt(1.0 - m)
    a_list = [a]
    c_list = [m]
    # a and b may end up alternating one ulp apart, so never ask for less than a few ulps
    tol = max(tol, 4.0 * sys.float_info.epsilon)
    for _ in range(_MAX_AGM_STEPS):
        c = 0.5 * (a - b)
        a, b = 0.5 * (a + b), math.sqrt(a * b)
        a_list.append(a)
        c_list.append(c)
        if abs(c) <= tol * abs(a) or a == b:
            return a_list, c_list
    raise NonConvergenceError(f"AGM did not converge for m={m!r}")


def complete_elliptic_K(m, tol=1e-12):
    """Complete elliptic integral of the first kind K(m), m < 1.

    Parameters
    ----------
    m : float
        Parameter (square of the modulus); negative values allowed.
    tol : float
        Absolute accuracy target.

    Returns
    -------
    float
    """
    if not m < 1.0:
        raise DomainError(f"K(m) requires m < 1, got {m!r}")
    if tol <= 0:
        raise DomainError("tol must be positive")
    a_list, _ = _agm_sequence(m, min(tol, 1e-15))
    return math.pi / (2.0 * a_list[-1])


def complete_elliptic_E(m, tol=1e-12):
    """Complete elliptic integral of the second kind E(m), m <= 1."""
    if m > 1.0:
        raise DomainError(f"E(m) requires m <= 1, got {m!r}")
    if tol <= 0:
        raise DomainError("tol must be positive")
    if m == 1.0:
        return 1.0
    a_list, c_list = _agm_sequence(m, min(tol, 1e-15))
    # c_list[0] is m = c_0**2; the rest are the c_n themselves.
    total = 0.5 * c_list[0]
    for n, c in enumerate(c_list[1:], start=1):
        total += 2.0 ** (n - 1) * c * c
    return (math.pi / (2.0 * a_list[-1])) * (1.0 - total)


def jacobi_sn_cn_dn(u, m):
    """Jacobi elliptic functions (sn, cn, dn) at argument ``u``, parameter m < 1.

    Uses the descending AGM recursion, which stays real for negative m.
    ``u`` may be a scalar or an array; the outputs follow its shape.
    """
    if not m < 1.0:
        raise DomainError(f"Jacobi functions require m < 1, got {m!r}")
    u_arr = np.asarray(u, dtype=float)
    if m == 0.0:
        return np.sin(u_arr), np.cos(u_arr), np.ones_like(u_arr)

    a_list, c_list = _agm_sequence(m, 1e-16)
    period = 4.0 * complete_elliptic_K(m)
    # reduce to a symmetric window so that the doubling step stays accurate
    x = u_arr - period * np.round(u_arr / period)
    steps = len(a_list) - 1
    phi = (2.0 ** steps) * a_list[-1] * x
    phis = [phi]
    for n in range(steps, 0, -1):
        phi = 0.5 * (phi + np.arcsin(np.clip(c_list[n] / a_list[n] * np.sin(phi), -1.0, 1.0)))
        phis.append(phi)
    phi0 = phis[-1]
    phi1 = phis[-2]
    sn = np.sin(phi0)
    cn = np.cos(phi0)
    dn = cn / np.cos(phi1 - phi0)
    if np.ndim(u) == 0:
        return float(sn), float(cn), float(dn)
    return sn, cn, dn


def modulus_residual(m):
    """Residual E(m) - K(m)(7+m)/6 of the equation fixing the modulus."""
    return complete_elliptic_E(m) - complete_elliptic_K(m) * (7.0 + m) / 6.0


def solve_modulus(tol=1e-12, bracket=(-0.9, -0.01)):
    """Solve E(m) = K(m)(7+m)/6 for the negative parameter of the profile."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    lo, hi = bracket
    f_lo, f_hi = modulus_residual(lo), modulus_residual(hi)
    if f_lo * f_hi > 0:
        raise RootNotBracketedError(
            f"residual has the same sign at m={lo} ({f_lo:.3e}) and m={hi} ({f_hi:.3e})"
        )
    root = brentq(modulus_residual, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(modulus_residual(root)) > tol:
        raise NonConvergenceError(f"modulus residual {modulus_residual(root):.3e} exceeds {tol}")
    return float(root)


@dataclass(frozen=True)
class EllipticParams:
    """Constants of the profile a0(xi) = V sn(Omega xi, m)."""

    m: float
    Omega: float
    V: float
    B: float
    D: float

    @classmethod
    def from_modulus(cls, m):
        if not (-1.0 < m < 0.0):
            raise DomainError(f"profile parameter must lie in (-1, 0), got {m!r}")
        omega = 2.0 * complete_elliptic_K(m) / math.pi
        return cls(
            m=m,
            Omega=omega,
            V=math.sqrt(-2.0 * m) * omega,
            B=-m / (1.0 - m),
            D=-1.0 / m,
        )

    def check(self, tol=1e-13):
        """Raise ``DomainError`` if a defining relation is violated."""
        problems = []
        if not (-1.0 < self.m < 0.0):
            problems.append("m outside (-1, 0)")
        if abs(self.V - math.sqrt(-2.0 * self.m) * self.Omega) > tol * abs(self.V):
            problems.append("V != sqrt(-2m) Omega")
        if abs(self.B * (1.0 + self.D) - 1.0) > tol:
            problems.append("B (1 + D) != 1")
        if not self.D > 0 or not (0.0 < self.B < 1.0):
            problems.append("D or B out of range")
        if problems:
            raise DomainError("; ".join(problems))
        return True

    def to_dict(self):
        return {"m": self.m, "Omega": self.Omega, "V": self.V, "B": self.B, "D": self.D}


def ground_state_params(tol=1e-12):
    """Profile constants built from the solved modulus."""
    params = EllipticParams.from_modulus(solve_modulus(tol))
    params.check()
    return params
