"""Unperturbed profile a0 and the Green operator of the linearised Q equation.

The Green operator ``L`` returns the unique odd periodic solution y of

    y'' + 3 (a0^2 + <a0^2>) y = h

for odd h, built by variation of constants from the two solutions cd and
beta xi cd + p of the homogeneous problem.  The periodic part p is computed
numerically; the closed-form choice p = B D s / Omega is kept for comparison
only, since it does not solve the homogeneous equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import EllipticParams, complete_elliptic_E, complete_elliptic_K, ground_state_params, jacobi_sn_cn_dn
from .errors import DomainError, InconsistencyError, ParityError, ResidualTooLargeError
from .series import FourierSeries1D, integrate_I, multiply, project_P

_INTERNAL_CUTOFF = 64


def _average_product(f, g):
    """<f g> for real series: sum_n f_n g_{-n}."""
    N = min(f.N, g.N)
    a = f.coeffs[f.N - N:f.N + N + 1]
    b = g.coeffs[g.N - N:g.N + N + 1][::-1]
    return float(np.real(np.sum(a * b)))


def _exact_product(f, g):
    return multiply(f, g, N=f.N + g.N)


@dataclass(frozen=True, eq=False)
class GreenKernel:
    """Data of the variation-of-constants Green operator.

    The odd periodic solution of y'' + 3(a0^2 + c0) y = h is

        y = p <p h> / beta + p I[cd h] - cd I[P[p h]] + beta cd I[I[cd h]]

    where cd and beta xi cd + p are the two homogeneous solutions with unit
    Wronskian.  The closed-form variant takes p = B D s / Omega and
    beta = B; the exact variant solves for p numerically.
    """

    beta: float
    p: FourierSeries1D
    cd: FourierSeries1D
    label: str = "exact"


@dataclass(frozen=True, eq=False)
class GroundState:
    """Fourier data of a0 = V sn(Omega xi, m), the kernels s, cd and the Green kernel."""

    params: EllipticParams
    a0: FourierSeries1D
    s: FourierSeries1D
    cd: FourierSeries1D
    c0: float
    kernel: GreenKernel = None
    r0: float = field(default=float("nan"))

    @property
    def N(self):
        return self.a0.N

    def equation_residual(self, a=None):
        """Max coefficient defect of a'' + 3<a^2> a + a^3 = 0."""
        a = self.a0 if a is None else a
        c0 = _average_product(a, a)
        cube = multiply(multiply(a, a, N=2 * a.N), a, N=a.N)
        res = a.derivative().derivative().coeffs + 3.0 * c0 * a.coeffs + cube.coeffs
        return float(np.max(np.abs(res)))


def _tables(params, N, samples):
    xi = 2.0 * math.pi * np.arange(samples) / samples
    sn, cn, dn = jacobi_sn_cn_dn(params.Omega * xi, params.m)
    s = FourierSeries1D.from_samples(sn, N, parity="odd")
    cd = FourierSeries1D.from_samples(cn * dn, N, parity="even")
    return s, cd


def _odd_basis(N):
    basis = np.zeros((2 * N + 1, N), dtype=complex)
    for k in range(1, N + 1):
        basis[N + k, k - 1] = 1.0
        basis[N - k, k - 1] = -1.0
    return basis


def _solve_odd(op, rhs, N):
    """Solve op y = rhs for odd y (least squares on the sine basis)."""
    basis = _odd_basis(N)
    x = np.linalg.lstsq(op @ basis, rhs, rcond=None)[0]
    return basis @ x


def printed_kernel(params, s, cd):
    """Closed-form kernel p = B D s / Omega, beta = B."""
    return GreenKernel(params.B, s * (params.B * params.D / params.Omega), cd, "closed-form")


def exact_kernel(gs):
    """Periodic part p of the secular homogeneous solution beta xi cd + p.

    p is the odd periodic solution of p'' + 3(a0^2 + c0) p = -2 beta cd',
    and beta is fixed by the unit Wronskian beta + p'(0) = 1.
    """
    N = gs.N
    op = linearised_operator_matrix(gs, N)
    p1 = FourierSeries1D(N, _solve_odd(op, -2.0 * gs.cd.derivative().coeffs, N), "odd", True)
    beta = 1.0 / (1.0 + float(p1.derivative()(0.0)))
    return GreenKernel(beta, p1 * beta, gs.cd, "exact")


def build_ground_state(N=64, tol=1e-12, residual_tol=1e-10):
    """Sample the elliptic functions and transform them to Fourier tables.

    The tables are produced at cutoff ``max(N, 64)`` (where the residual of
    the profile equation is checked) and then truncated to ``N``.
    """
    if N < 16:
        raise DomainError("ground state needs a cutoff of at least 16")
    params = ground_state_params(tol)
    n_int = max(N, _INTERNAL_CUTOFF)
    s_big, cd_big = _tables(params, n_int, samples=max(8 * n_int, 512))
    a_big = s_big * params.V
    big = GroundState(params, a_big, s_big, cd_big, _average_product(a_big, a_big))
    residual = big.equation_residual()
    if residual > residual_tol:
        raise ResidualTooLargeError(f"profile equation residual {residual:.2e} exceeds {residual_tol:.0e}")
    k_big = exact_kernel(big)
    kernel = GreenKernel(k_big.beta, k_big.p.resized(N), cd_big.resized(N), "exact")
    a0 = a_big.resized(N)
    gs = GroundState(params, a0, s_big.resized(N), cd_big.resized(N), _average_product(a0, a0), kernel)
    return GroundState(gs.params, gs.a0, gs.s, gs.cd, gs.c0, kernel, compute_r0(gs))


def with_kernel(gs, kernel):
    """Copy of ``gs`` using another Green kernel (r0 recomputed directly)."""
    tmp = GroundState(gs.params, gs.a0, gs.s, gs.cd, gs.c0, kernel)
    r0 = 1.0 + 6.0 * _average_product(gs.a0, apply_L(tmp, gs.a0))
    return GroundState(gs.params, gs.a0, gs.s, gs.cd, gs.c0, kernel, r0)


def rescaled_profile(gs, j):
    """Coefficients of j a0(j xi): mode n of a0 moves to mode j n."""
    N = gs.N * j
    c = np.zeros(2 * N + 1, dtype=complex)
    c[N + j * gs.a0.modes] = j * gs.a0.coeffs
    return FourierSeries1D(N, c, "odd", True)


def _check_odd(h):
    if h.parity != "odd":
        scale = max(1.0, h.max_abs())
        if np.max(np.abs(h.coeffs + h.coeffs[::-1])) > 1e-12 * scale:
            raise ParityError("the Green operator acts on odd series only")
        h = h.with_coeffs(h.coeffs, parity="odd")
    return h


def apply_L(gs, h, kernel=None):
    """Compositional form of the Green operator, output at the cutoff of ``h``."""
    h = _check_odd(h)
    k = gs.kernel if kernel is None else kernel
    p, cd = k.p, k.cd
    cd_h = _exact_product(cd, h)
    p_h = _exact_product(p, h)
    i_cd_h = integrate_I(cd_h, tol=1e-12)
    total = (
        p * (p_h.mean().real / k.beta)
        + _exact_product(p, i_cd_h)
        - _exact_product(cd, integrate_I(project_P(p_h)))
        + _exact_product(cd, integrate_I(i_cd_h)) * k.beta
    )
    return FourierSeries1D(h.N, total.resized(h.N).coeffs, "odd", True)


def build_L_matrix(gs, N=None, kernel=None):
    """Dense matrix L[n + N, n' + N] with (L h)_n = sum_{n'} L_{n,n'} h_{n'}.

    Entries are assembled mode by mode from the kernel tables; the starred
    sums skip every term where n2 + n' = 0, and the n2 = -n' term is the
    separate zero-momentum contribution.
    """
    N = gs.N if N is None else N
    if N < 8:
        raise DomainError("matrix cutoff must be at least 8")
    k = gs.kernel if kernel is None else kernel
    Ns = k.p.N
    if k.cd.N != Ns:
        raise DomainError("kernel tables must share a cutoff")
    p, cd = k.p.coeffs, k.cd.coeffs
    n2 = np.arange(-Ns, Ns + 1)
    rows = np.arange(-N, N + 1)
    p_rows = np.array([k.p.coeff(int(n)) for n in rows])
    L = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
    for col, n_prime in enumerate(range(-N, N + 1)):
        q = n2 + n_prime
        inv = np.zeros(q.shape, dtype=complex)
        nz = q != 0
        inv[nz] = 1.0 / (1j * q[nz])
        # entry (n1 + n2) = n - n' sits at offset 2 Ns of the full convolution
        conv_cdcd = np.convolve(cd, cd * inv ** 2)
        conv_pcd = np.convolve(p, cd * inv)
        conv_cdp = np.convolve(cd, p * inv)
        shift = rows - n_prime + 2 * Ns
        ok = (shift >= 0) & (shift < conv_cdcd.size)
        col_vals = np.zeros(2 * N + 1, dtype=complex)
        col_vals[ok] = k.beta * conv_cdcd[shift[ok]] + conv_pcd[shift[ok]] - conv_cdp[shift[ok]]
        if abs(n_prime) <= Ns:
            col_vals += p_rows * p[-n_prime + Ns] / k.beta
        L[:, col] = col_vals
    return L


def linearised_operator_matrix(gs, N=None):
    """Matrix of y -> y'' + 3(a0^2 + c0) y on modes |n| <= N."""
    N = gs.N if N is None else N
    a2 = _exact_product(gs.a0, gs.a0)
    M = a2.N
    n = np.arange(-N, N + 1)
    diff = n[:, None] - n[None, :]
    inside = np.abs(diff) <= M
    conv = np.zeros(diff.shape, dtype=complex)
    conv[inside] = a2.coeffs[diff[inside] + M]
    return np.diag(-(n ** 2) + 3.0 * gs.c0 + 0j) + 3.0 * conv


def L_equation_residual(gs, h, y=None, kernel=None):
    """Max coefficient defect of y'' + 3(a0^2 + c0) y - h with y = L[h]."""
    y = apply_L(gs, h, kernel) if y is None else y
    op = linearised_operator_matrix(gs, y.N)
    res = op @ y.coeffs - h.resized(y.N).coeffs
    return float(np.max(np.abs(res)))


def odd_singular_gap(gs, N=None):
    """Smallest singular value of the linearised operator on odd sine modes."""
    N = gs.N if N is None else N
    reduced = linearised_operator_matrix(gs, N) @ _odd_basis(N)
    return float(np.linalg.svd(reduced, compute_uv=False).min())


def sn_moments(m):
    """Closed forms of <sn^2> and <sn^4> over a period, parameter m."""
    K, E = complete_elliptic_K(m), complete_elliptic_E(m)
    s2 = (K - E) / (m * K)
    s4 = ((2.0 + m) * K - 2.0 * (1.0 + m) * E) / (3.0 * m * m * K)
    return s2, s4


def r0_closed_form(params, s2, s4):
    """1 + 6 <a0 L[a0]> for the closed-form kernel, from <s^2> and <s^4>."""
    D, B = params.D, params.B
    inner = 0.5 * params.V ** 2 * params.Omega ** -2 * B * (
        (2.0 * D - 0.5) * s4 + (2.0 * D * (D - 1.0) + 0.5) * s2 ** 2
    )
    return 1.0 + 6.0 * inner


def r0_exact_closed_form(m):
    """1 + 6 <a0 L[a0]> for the exact Green operator.

    L[a0] = -(1/3) d a0/dc along the family of 2pi-periodic profiles with
    coupling c, hence r0 = 1 - d<a^2>/dc with <a^2> = -(8/pi^2) K (K - E)
    and c = 4 (1 + m) K^2 / (3 pi^2).
    """
    K, E = complete_elliptic_K(m), complete_elliptic_E(m)
    dK = (E - (1.0 - m) * K) / (2.0 * m * (1.0 - m))
    dE = (E - K) / (2.0 * m)
    d_avg = -(8.0 / math.pi ** 2) * (dK * (K - E) + K * (dK - dE))
    d_c = (4.0 / (3.0 * math.pi ** 2)) * (K * K + 2.0 * (1.0 + m) * K * dK)
    return 1.0 - d_avg / d_c


def r0_direct(gs, kernel=None):
    return 1.0 + 6.0 * _average_product(gs.a0, apply_L(gs, gs.a0, kernel))


def compute_r0(gs, tol=1e-9):
    """r0 = 1 + 6 <a0 L[a0]>, checked against its closed form.

    For the exact kernel the closed form is ``r0_exact_closed_form``; for
    the closed-form kernel it is ``r0_closed_form`` on sampled moments.
    """
    direct = r0_direct(gs)
    if gs.kernel.label == "exact":
        closed = r0_exact_closed_form(gs.params.m)
    else:
        s2 = _average_product(gs.s, gs.s)
        s_sq = _exact_product(gs.s, gs.s)
        closed = r0_closed_form(gs.params, s2, _average_product(s_sq, s_sq))
    if abs(closed - direct) > tol:
        raise InconsistencyError(f"r0 closed form {closed!r} differs from direct {direct!r}")
    return direct


def solve_Ak(gs, f_k):
    """Return ``(A_k, C_k)`` with C_k = <a0 L f_k>/r0 and A_k = L[f_k - 6 C_k a0]."""
    f_k = _check_odd(f_k)
    Lf = apply_L(gs, f_k)
    C = _average_product(gs.a0, Lf) / gs.r0
    a0 = gs.a0.resized(f_k.N)
    A = apply_L(gs, f_k - a0 * (6.0 * C))
    return A, C


def average(f, g):
    """<f g> for two real series."""
    return _average_product(f, g)


def wronskian_residuals(gs, kernel=None, samples=256):
    """ODE defects of the homogeneous pair cd and beta xi cd + p on a grid.

    Returns ``(defect_cd, defect_secular, det_defect)``: the residuals of
    y'' + 3(a0^2 + c0) y = 0 for both solutions, and the largest deviation
    of their Wronskian from 1.
    """
    k = gs.kernel if kernel is None else kernel
    xi = 2.0 * math.pi * np.arange(samples) / samples
    pot = 3.0 * (gs.a0.sample(samples) ** 2 + gs.c0)
    d1, d2 = gs.cd.derivative(), gs.cd.derivative().derivative()
    cd, dcd, ddcd = gs.cd.sample(samples), d1.sample(samples), d2.sample(samples)
    p, dp, ddp = k.p.sample(samples), k.p.derivative().sample(samples), k.p.derivative().derivative().sample(samples)
    defect_cd = np.max(np.abs(ddcd + pot * cd))
    w12 = k.beta * xi * cd + p
    dw12 = k.beta * (cd + xi * dcd) + dp
    ddw12 = k.beta * (2.0 * dcd + xi * ddcd) + ddp
    defect_sec = np.max(np.abs(ddw12 + pot * w12))
    det = cd * dw12 - w12 * dcd
    return float(defect_cd), float(defect_sec), float(np.max(np.abs(det - 1.0)))
