"""Damped Newton solve of the truncated Q and P equations.

The unknowns are the real numbers b with u_{n,m} = i b_{n,m} for n >= 0,
m >= 1; the other coefficients follow from u_{n,m} = -u_{n,-m} = u_{-n,m}.
Rows with n = m are Q rows, the rest are P rows:

    n^2 u_{n,n}               - [g(u)]_{n,n}        = 0
    (-omega^2 n^2 + m^2) u_{n,m} - s eps [g(u)]_{n,m} = 0

with g(u) = sum_k c_k (j^2 eps)^{k-1} u^{2k+1}.  This module does not use
the expansion code, so it serves as an independent oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve

from .errors import DomainError, NonConvergenceError, SmallDivisorError
from .qsolver import build_ground_state
from .series import FourierSeries1D, FourierSeries2D, weighted_norm


@dataclass(frozen=True)
class NewtonConfig:
    N: int = 16
    epsilon: float = 1e-3
    j: int = 1
    phi: tuple = (1.0,)
    max_iter: int = 12
    damping: float = 1.0
    residual_tol: float = 1e-10
    divisor_floor: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(p) for p in self.phi))
        if self.N < 2:
            raise DomainError("cutoff must be at least 2")
        if not (0 < self.damping <= 1):
            raise DomainError("damping must lie in (0, 1]")
        if not self.phi or self.phi[0] == 0:
            raise DomainError("the cubic coefficient must be nonzero")
        if self.epsilon < 0 or self.epsilon >= 1:
            raise DomainError("epsilon must lie in [0, 1)")

    @property
    def sign(self):
        return 1.0 if self.phi[0] > 0 else -1.0

    @property
    def omega2(self):
        return 1.0 - self.sign * self.epsilon

    def couplings(self):
        F = abs(self.phi[0])
        return [
            (k, self.sign * p / F ** k * (self.j * self.j * self.epsilon) ** (k - 1))
            for k, p in enumerate(self.phi, start=1)
        ]


class _Layout:
    """Index maps between the reduced real unknowns and the full centred table."""

    def __init__(self, N):
        self.N = N
        self.pairs = [(n, m) for n in range(0, N + 1) for m in range(1, N + 1)]
        size = (2 * N + 1) ** 2
        E = np.zeros((size, len(self.pairs)))
        for col, (n, m) in enumerate(self.pairs):
            for sn in (1, -1):
                for sm in (1, -1):
                    if n == 0 and sn == -1:
                        continue
                    E[self._flat(sn * n, sm * m), col] += sm
        self.expand_matrix = E
        self.rows = np.array([self._flat(n, m) for n, m in self.pairs])

    def _flat(self, n, m):
        W = 2 * self.N + 1
        return (n + self.N) * W + (m + self.N)

    def table(self, b):
        W = 2 * self.N + 1
        return (1j * (self.expand_matrix @ b)).reshape(W, W)


def _power(u, s):
    out = u
    for _ in range(s - 1):
        out = convolve(out, u, mode="full")
    return out


def _crop(table, N):
    c = (table.shape[0] - 1) // 2
    return table[c - N : c + N + 1, c - N : c + N + 1]


def _linear_diagonal(cfg, N):
    n = np.arange(-N, N + 1, dtype=float)
    m = np.arange(-N, N + 1, dtype=float)
    diag = np.abs(n)[:, None] == np.abs(m)[None, :]
    lin = np.where(diag, n[:, None] ** 2 + 0 * m[None, :], -cfg.omega2 * n[:, None] ** 2 + m[None, :] ** 2)
    scale = np.where(diag, 1.0, cfg.sign * cfg.epsilon)
    return lin, scale, diag


def residual(b, cfg, layout=None):
    layout = _Layout(cfg.N) if layout is None else layout
    N = cfg.N
    u = layout.table(b)
    lin, scale, _ = _linear_diagonal(cfg, N)
    g = np.zeros_like(u)
    for k, c in cfg.couplings():
        g += c * _crop(_power(u, 2 * k + 1), N)
    F = lin * u - scale * g
    return np.imag(F.reshape(-1)[layout.rows])


def jacobian(b, cfg, layout=None):
    """Analytic Jacobian of :func:`residual` in the reduced unknowns."""
    layout = _Layout(cfg.N) if layout is None else layout
    N = cfg.N
    W = 2 * N + 1
    u = layout.table(b)
    lin, scale, _ = _linear_diagonal(cfg, N)
    kernel = np.zeros((4 * N + 1, 4 * N + 1), dtype=complex)
    for k, c in cfg.couplings():
        s = 2 * k + 1
        P = _power(u, s - 1) if s > 1 else None
        kernel += c * s * _crop(P, 2 * N)
    idx = np.arange(-N, N + 1)
    dn = idx[:, None] - idx[None, :]
    # derivative of [g]_{n,m} w.r.t. u_{n',m'} is kernel[n - n', m - m']
    G = kernel[(dn + 2 * N)[:, None, :, None], (dn + 2 * N)[None, :, None, :]]
    G = G.reshape(W * W, W * W)
    rows = layout.rows
    full = -scale.reshape(-1)[rows, None] * G[rows]
    full[np.arange(len(rows)), rows] += lin.reshape(-1)[rows]
    # du = i E db and the residual takes the imaginary part
    return np.real(full @ layout.expand_matrix)


def finite_difference_jacobian(b, cfg, step=1e-6, layout=None):
    layout = _Layout(cfg.N) if layout is None else layout
    J = np.zeros((len(b), len(b)))
    for i in range(len(b)):
        e = np.zeros_like(b)
        e[i] = step
        J[:, i] = (residual(b + e, cfg, layout) - residual(b - e, cfg, layout)) / (2 * step)
    return J


def initial_guess(cfg, ground=None):
    ground = build_ground_state(max(cfg.N, 16)) if ground is None else ground
    layout = _Layout(cfg.N)
    b = np.zeros(len(layout.pairs))
    a0 = ground.a0.resized(cfg.N)
    for col, (n, m) in enumerate(layout.pairs):
        if n == m:
            b[col] = float(np.imag(a0.coeff(n)))
    return b, layout, ground


def _check_divisors(cfg):
    lin, _, diag = _linear_diagonal(cfg, cfg.N)
    n = np.arange(-cfg.N, cfg.N + 1)
    mask = ~diag & (n[None, :] != 0)
    bad = mask & (np.abs(lin) < cfg.divisor_floor)
    if np.any(bad):
        i, jj = np.argwhere(bad)[0]
        raise SmallDivisorError("divisor below floor", int(i - cfg.N), int(jj - cfg.N), float(lin[i, jj]))


def solve_full(cfg, ground=None, b0=None):
    """Newton iteration from (a0, w = 0) with Armijo backtracking (factor 1/2, minimum step 2^-20)."""
    _check_divisors(cfg)
    b, layout, ground = initial_guess(cfg, ground)
    if b0 is not None:
        b = np.array(b0, dtype=float)
    r = residual(b, cfg, layout)
    norm = float(np.max(np.abs(r)))
    history = [norm]
    it = 0
    while norm > cfg.residual_tol:
        if it >= cfg.max_iter:
            raise NonConvergenceError(f"Newton did not reach {cfg.residual_tol:g} in {cfg.max_iter} steps (residual {norm:.3e})")
        J = jacobian(b, cfg, layout)
        step = np.linalg.solve(J, -r)
        lam = cfg.damping
        while True:
            trial = b + lam * step
            r_trial = residual(trial, cfg, layout)
            n_trial = float(np.max(np.abs(r_trial)))
            if n_trial <= (1.0 - 1e-4 * lam) * norm or n_trial <= cfg.residual_tol:
                break
            lam *= 0.5
            if lam < 2.0 ** -20:
                raise NonConvergenceError("Newton step failed to reduce the residual")
        b, r, norm = trial, r_trial, n_trial
        history.append(norm)
        it += 1
    u = FourierSeries2D(cfg.N, layout.table(b))
    idx = np.arange(-cfg.N, cfg.N + 1)
    a = FourierSeries1D(cfg.N, u.coeffs[idx + cfg.N, idx + cfg.N])
    n = np.arange(-cfg.N, cfg.N + 1)
    offdiag = (np.abs(n)[:, None] != np.abs(n)[None, :])
    w = FourierSeries2D(cfg.N, u.coeffs * offdiag)
    return {"u": u, "a": a, "w": w, "iterations": it, "residual": norm, "history": history, "unknowns": b}


def unperturbed_table(cfg, ground=None):
    b, layout, _ = initial_guess(cfg, ground)
    return FourierSeries2D(cfg.N, layout.table(b))


def scaling_study(eps_list, cfg=None, r=0.1, ground=None):
    """Distance ||u - u0|| (weighted norm, rescaled variables) per epsilon and the fitted log-log slope."""
    cfg = NewtonConfig() if cfg is None else cfg
    ground = build_ground_state(max(cfg.N, 16)) if ground is None else ground
    rows = []
    for eps in eps_list:
        c = NewtonConfig(cfg.N, eps, cfg.j, cfg.phi, cfg.max_iter, cfg.damping, cfg.residual_tol, cfg.divisor_floor)
        sol = solve_full(c, ground)
        u0 = unperturbed_table(c, ground)
        d = weighted_norm(sol["u"] - u0, r)
        rows.append({"epsilon": eps, "distance": d, "iterations": sol["iterations"], "residual": sol["residual"]})
    x = np.log([row["epsilon"] for row in rows])
    y = np.log([row["distance"] for row in rows])
    slope, intercept = np.polyfit(x, y, 1)
    return {"rows": rows, "slope": float(slope), "constant": float(math.exp(intercept)), "r": r}


def scaling_csv(study):
    lines = ["epsilon,distance,iterations,residual"]
    for row in study["rows"]:
        lines.append(f"{row['epsilon']!r},{row['distance']!r},{row['iterations']},{row['residual']!r}")
    return "\n".join(lines) + "\n"


def cross_validate(state, solved, K=None):
    """Coefficient-wise difference between the truncated expansion at mu = 1 and the Newton solution."""
    from .lindstedt import summed

    K = state.computed_order if K is None else K
    u_exp = summed(state, 1.0, K).coeffs
    u_sol = solved["u"].coeffs
    diff = u_exp - u_sol
    N = state.N
    n = np.arange(-N, N + 1)
    offdiag = np.abs(n)[:, None] != np.abs(n)[None, :]
    return {
        "K": K,
        "max_diff": float(np.max(np.abs(diff))),
        "offdiag_diff": float(np.max(np.abs(diff * offdiag))),
        "diag_diff": float(np.max(np.abs(diff * ~offdiag))),
    }


def solution_json(sol, cfg):
    return json.dumps(
        {
            "N": cfg.N,
            "epsilon": cfg.epsilon,
            "j": cfg.j,
            "phi": list(cfg.phi),
            "iterations": sol["iterations"],
            "residual": sol["residual"],
            "u": json.loads(sol["u"].to_json()),
        }
    )
