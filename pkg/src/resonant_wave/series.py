"""Truncated Fourier coefficient tables and the elementary operators on them.

One-dimensional series are functions of xi = omega t +- x stored as the
coefficients c_n, |n| <= N, of sum_n c_n exp(i n xi).  Two-dimensional
series store u_{n,m}, |n|, |m| <= N, of sum u_{n,m} exp(i n omega t + i m x)
on the full rectangle.

Products are evaluated exactly in coefficient space (direct convolution,
no wrap-around) and then truncated to the container cutoff.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve, convolve2d

from .errors import DomainError, NumericError, ParityError, PreconditionError

PARITIES = ("odd", "even", "none")
_SYM_RTOL = 1e-9
_SYM_ATOL = 1e-13


def _tolerance(c):
    return _SYM_ATOL + _SYM_RTOL * (float(np.max(np.abs(c))) if c.size else 0.0)


@dataclass(frozen=True, eq=False)
class FourierSeries1D:
    """Coefficients c_n for n = -N..N; ``coeffs[n + N]`` holds c_n.

    On construction the declared parity and reality are checked to a loose
    tolerance and then imposed exactly, so downstream code may rely on them.
    """

    N: int
    coeffs: np.ndarray
    parity: str = "none"
    reality: bool = True

    def __post_init__(self):
        if self.N < 0:
            raise DomainError("cutoff must be non-negative")
        if self.parity not in PARITIES:
            raise DomainError(f"parity must be one of {PARITIES}")
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (2 * self.N + 1,):
            raise DomainError(f"expected {2 * self.N + 1} coefficients, got shape {c.shape}")
        tol = _tolerance(c)
        rev = c[::-1]
        if self.parity == "odd":
            if np.max(np.abs(c + rev)) > tol:
                raise ParityError("coefficients are not odd")
            c = 0.5 * (c - rev)
        elif self.parity == "even":
            if np.max(np.abs(c - rev)) > tol:
                raise ParityError("coefficients are not even")
            c = 0.5 * (c + rev)
        if self.reality:
            if np.max(np.abs(c[::-1] - np.conj(c))) > tol:
                raise ParityError("coefficients do not describe a real function")
            c = 0.5 * (c + np.conj(c[::-1]))
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, N, parity="odd", reality=True):
        return cls(N, np.zeros(2 * N + 1, dtype=complex), parity, reality)

    @classmethod
    def from_dict(cls, N, entries, parity="none", reality=True):
        c = np.zeros(2 * N + 1, dtype=complex)
        for n, value in entries.items():
            c[n + N] = value
        return cls(N, c, parity, reality)

    @classmethod
    def from_samples(cls, values, N, parity="none", reality=True):
        """Coefficients of a 2pi-periodic function sampled on a uniform grid.

        ``values[k]`` is the function at xi = 2 pi k / M with M = len(values);
        M must exceed 2N.
        """
        values = np.asarray(values)
        M = values.shape[0]
        if M <= 2 * N:
            raise DomainError("need more than 2N samples")
        spec = np.fft.fft(values) / M
        n = np.arange(-N, N + 1)
        return cls(N, spec[n % M], parity, reality)

    # access ----------------------------------------------------------------
    @property
    def modes(self):
        return np.arange(-self.N, self.N + 1)

    def coeff(self, n):
        if abs(n) > self.N:
            return 0.0j
        return complex(self.coeffs[n + self.N])

    def mean(self):
        return complex(self.coeffs[self.N])

    def sample(self, M):
        """Values on the uniform grid xi_k = 2 pi k / M."""
        if M <= 2 * self.N:
            raise DomainError("need more than 2N sample points")
        spec = np.zeros(M, dtype=complex)
        spec[self.modes % M] = self.coeffs
        vals = np.fft.ifft(spec) * M
        return vals.real if self.reality else vals

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        vals = np.exp(1j * np.multiply.outer(xi, self.modes)) @ self.coeffs
        return vals.real if self.reality else vals

    def resized(self, N):
        """Same series with cutoff N (zero padded or truncated)."""
        c = np.zeros(2 * N + 1, dtype=complex)
        k = min(N, self.N)
        c[N - k:N + k + 1] = self.coeffs[self.N - k:self.N + k + 1]
        return FourierSeries1D(N, c, self.parity, self.reality)

    def derivative(self):
        flipped = {"odd": "even", "even": "odd", "none": "none"}[self.parity]
        return FourierSeries1D(self.N, 1j * self.modes * self.coeffs, flipped, self.reality)

    def with_coeffs(self, coeffs, parity=None, reality=None):
        return FourierSeries1D(
            self.N,
            coeffs,
            self.parity if parity is None else parity,
            self.reality if reality is None else reality,
        )

    def __add__(self, other):
        return _combine(self, other, 1.0)

    def __sub__(self, other):
        return _combine(self, other, -1.0)

    def __mul__(self, scalar):
        if isinstance(scalar, FourierSeries1D):
            return multiply(self, scalar)
        real = self.reality and np.isreal(scalar)
        return FourierSeries1D(self.N, self.coeffs * scalar, self.parity, bool(real))

    __rmul__ = __mul__

    def max_abs(self):
        return float(np.max(np.abs(self.coeffs)))

    def to_json(self):
        entries = [[int(n), float(c.real), float(c.imag)] for n, c in zip(self.modes, self.coeffs)]
        return json.dumps(
            {"cutoff": self.N, "parity": self.parity, "reality": self.reality, "entries": entries},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        N = data["cutoff"]
        c = np.zeros(2 * N + 1, dtype=complex)
        for n, re, im in data["entries"]:
            c[n + N] = complex(re, im)
        return cls(N, c, data["parity"], data["reality"])


def _combine(f, g, sign):
    N = max(f.N, g.N)
    a, b = f.resized(N), g.resized(N)
    parity = f.parity if f.parity == g.parity else "none"
    return FourierSeries1D(N, a.coeffs + sign * b.coeffs, parity, f.reality and g.reality)


def project_P(f):
    """Remove the mean: the n = 0 coefficient is set to zero."""
    c = np.array(f.coeffs)
    c[f.N] = 0.0
    return f.with_coeffs(c)


def integrate_I(f, tol=1e-14):
    """Zero-mean primitive: c_n -> c_n / (i n) for n != 0."""
    scale = max(1.0, f.max_abs())
    if abs(f.mean()) > tol * scale:
        raise PreconditionError(f"primitive needs a zero-mean input, mean = {f.mean():.3e}")
    n = f.modes
    c = np.zeros_like(f.coeffs)
    nz = n != 0
    c[nz] = f.coeffs[nz] / (1j * n[nz])
    flipped = {"odd": "even", "even": "odd", "none": "none"}[f.parity]
    return FourierSeries1D(f.N, c, flipped, f.reality)


def _product_parity(p, q):
    if "none" in (p, q):
        return "none"
    return "even" if p == q else "odd"


def convolve_full(a, b):
    """Exact linear convolution of two centred coefficient vectors."""
    return convolve(a, b, method="direct")


def multiply(f, g, N=None):
    """Product of two series, truncated to ``N`` (default: the larger cutoff)."""
    N = max(f.N, g.N) if N is None else N
    full = convolve_full(f.coeffs, g.coeffs)
    centre = f.N + g.N
    c = np.zeros(2 * N + 1, dtype=complex)
    k = min(N, centre)
    c[N - k:N + k + 1] = full[centre - k:centre + k + 1]
    return FourierSeries1D(N, c, _product_parity(f.parity, g.parity), f.reality and g.reality)


def fit_decay(f, min_modes=3, floor=1e-14):
    """Fit |c_n| ~ alpha exp(-2 kappa |n|) over the odd harmonics n >= 1.

    Returns ``(alpha, kappa)``.  Modes below ``floor`` times the largest one
    are treated as numerical zeros and skipped.
    """
    if f.N < 8:
        raise DomainError("decay fit needs a cutoff of at least 8")
    n = np.arange(1, f.N + 1, 2)
    mags = np.abs(f.coeffs[n + f.N])
    if not np.any(mags > 0):
        raise NumericError("cannot fit decay of a zero series")
    keep = mags > floor * mags.max()
    if keep.sum() < min_modes:
        raise NumericError(f"decay fit has only {int(keep.sum())} usable modes")
    slope, intercept = np.polyfit(n[keep], np.log(mags[keep]), 1)
    return float(np.exp(intercept)), float(-slope / 2.0)


@dataclass(frozen=True, eq=False)
class FourierSeries2D:
    """Coefficients u_{n,m} with ``coeffs[n + N, m + N]``.

    With ``dirichlet_symmetry`` the table is projected onto
    u_{n,m} = -u_{n,-m} = u_{-n,m}; combined with reality this makes every
    entry purely imaginary.
    """

    N: int
    coeffs: np.ndarray
    dirichlet_symmetry: bool = True
    reality: bool = True

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (2 * self.N + 1, 2 * self.N + 1):
            raise DomainError(f"expected a {(2 * self.N + 1,) * 2} table, got {c.shape}")
        if self.dirichlet_symmetry:
            c = 0.25 * ((c - c[:, ::-1]) + (c[::-1, :] - c[::-1, ::-1]))
        if self.reality:
            c = 0.5 * (c + np.conj(c[::-1, ::-1]))
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, N):
        return cls(N, np.zeros((2 * N + 1, 2 * N + 1), dtype=complex))

    @classmethod
    def from_independent(cls, N, entries):
        """Build from values at independent modes n >= 0, m >= 1, filling images."""
        c = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        for (n, m), value in entries.items():
            for sn in {1, -1} if n else {1}:
                for sm in (1, -1):
                    c[sn * n + N, sm * m + N] = sm * value
        return cls(N, c)

    def coeff(self, n, m):
        if abs(n) > self.N or abs(m) > self.N:
            return 0.0j
        return complex(self.coeffs[n + self.N, m + self.N])

    @property
    def modes(self):
        return np.arange(-self.N, self.N + 1)

    def symmetry_defect(self):
        """Largest violation of u_{n,m} = -u_{n,-m} = u_{-n,m} and reality."""
        c = self.coeffs
        return float(
            max(
                np.max(np.abs(c + c[:, ::-1])),
                np.max(np.abs(c - c[::-1, :])),
                np.max(np.abs(c[::-1, ::-1] - np.conj(c))),
            )
        )

    def resized(self, N):
        c = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        k = min(N, self.N)
        c[N - k:N + k + 1, N - k:N + k + 1] = self.coeffs[self.N - k:self.N + k + 1, self.N - k:self.N + k + 1]
        return FourierSeries2D(N, c, self.dirichlet_symmetry, self.reality)

    def __add__(self, other):
        N = max(self.N, other.N)
        return FourierSeries2D(N, self.resized(N).coeffs + other.resized(N).coeffs)

    def __sub__(self, other):
        N = max(self.N, other.N)
        return FourierSeries2D(N, self.resized(N).coeffs - other.resized(N).coeffs)

    def __mul__(self, scalar):
        return FourierSeries2D(self.N, self.coeffs * scalar, self.dirichlet_symmetry, self.reality)

    __rmul__ = __mul__

    def evaluate(self, x, t, omega):
        """Pointwise value at (x, t) with time frequency ``omega``."""
        n = self.modes
        et = np.exp(1j * omega * np.multiply.outer(np.asarray(t, dtype=float), n))
        ex = np.exp(1j * np.multiply.outer(np.asarray(x, dtype=float), n))
        vals = np.einsum("...a,ab,...b->...", et, self.coeffs, ex)
        return vals.real if self.reality else vals

    def to_json(self):
        entries = []
        for i, n in enumerate(self.modes):
            for j, m in enumerate(self.modes):
                c = self.coeffs[i, j]
                entries.append([int(n), int(m), float(c.real), float(c.imag)])
        return json.dumps(
            {
                "cutoff": self.N,
                "dirichlet_symmetry": self.dirichlet_symmetry,
                "reality": self.reality,
                "entries": entries,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        N = data["cutoff"]
        c = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        for n, m, re, im in data["entries"]:
            c[n + N, m + N] = complex(re, im)
        return cls(N, c, data["dirichlet_symmetry"], data["reality"])


def convolve2d_full(a, b):
    """Exact 2D linear convolution of centred tables (direct summation)."""
    return convolve2d(a, b, mode="full")


def truncate_centred(table, N):
    """Cut a centred square table down to the modes |n|, |m| <= N."""
    M = (table.shape[0] - 1) // 2
    if M <= N:
        out = np.zeros((2 * N + 1, 2 * N + 1), dtype=table.dtype)
        out[N - M:N + M + 1, N - M:N + M + 1] = table
        return out
    return table[M - N:M + N + 1, M - N:M + N + 1]


def weighted_norm(u, r):
    """sum |u_{n,m}| exp(r(|n| + |m|)) over every stored entry.

    The full rectangle is summed, so a mode and its three symmetry images
    each count once.
    """
    if r < 0:
        raise DomainError("weight r must be non-negative")
    n = np.abs(u.modes)
    exponent = r * (n[:, None] + n[None, :])
    with np.errstate(over="raise"):
        try:
            total = float(np.sum(np.abs(u.coeffs) * np.exp(exponent)))
        except FloatingPointError as exc:
            raise NumericError("weighted norm overflowed") from exc
    if not np.isfinite(total):
        raise NumericError("weighted norm overflowed")
    return total
