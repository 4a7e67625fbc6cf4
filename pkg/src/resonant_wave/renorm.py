"""Self-energy values, localization and the counterterm fixed point.

A self-energy shape (see :func:`trees.self_energy_shapes`) is evaluated as
a linear map on its entering line.  The entering line is a unit impulse at
(n, m); lines on the path from it to the root carry the argument
omega (n_l - n) + x in place of omega n_l.  The outgoing propagator is not
part of the value.  The entry of the root table at (n, m) is the type-a
value and the entry at (n, -m) is the type-b value.

Counterterms are stored per scale h = -1..h_max and per |m|, for both
types; the combination that shifts the frequencies is nu_a - nu_b, because
Dirichlet symmetry gives w_{n,-m} = -w_{n,m}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NonConvergenceError
from .frequencies import FrequencyTable
from .lindstedt import ExpansionConfig, evaluate_and_residual, expand, initial_state
from .qsolver import apply_L, average, build_ground_state
from .trees import (
    END,
    HOLE,
    ShapeEvaluator,
    SpectralProducts,
    TreeContext,
    cumulative_partition,
    enumerate_shapes,
    self_energy_shapes,
)

GAUSS_5 = np.polynomial.legendre.leggauss(5)


@dataclass(eq=False)
class RenormContext:
    """Inputs of the counterterm construction at cutoff N (working frame with j = 1)."""

    ground: object
    N: int = 16
    epsilon: float = 1e-3
    freqs: FrequencyTable = None
    K_se: int = 2
    C0: float = 0.01
    h_max: int = 12
    phi: tuple = (1.0,)

    def __post_init__(self):
        if self.freqs is None:
            self.freqs = FrequencyTable.unperturbed(self.N, self.epsilon)
        if self.freqs.N < self.N:
            raise DomainError("frequency table must cover the cutoff")
        if self.K_se < 1 or self.K_se > 3:
            raise DomainError("self-energy order must lie in 1..3")
        if self.h_max < 0:
            raise DomainError("h_max must be non-negative")

    @classmethod
    def default(cls, N=16, epsilon=1e-3, **kw):
        return cls(build_ground_state(max(N, 16)), N=N, epsilon=epsilon, **kw)

    def config(self, K=1):
        return ExpansionConfig(K=K, N=self.N, epsilon=self.epsilon, phi=self.phi)

    def with_freqs(self, freqs):
        return replace(self, freqs=freqs)

    def tree_context(self, nu_a=None, nu_b=None, gamma=0.0):
        state = initial_state(self.config(), ground=self.ground, freqs=self.freqs, nu=nu_a, nu_b=nu_b, gamma=gamma)
        return TreeContext.from_state(state)


def _flat_evaluator(ctx, cap, C0):
    """Shape evaluator for subtrees without the hole, shared per (context, cap)."""
    cache = ctx.__dict__.setdefault("_flat_cache", {})
    key = (cap, C0)
    if key not in cache:
        ev = ShapeEvaluator(ctx)
        if cap is not None:
            N = ctx.N
            n = np.arange(-N, N + 1)
            wt = np.sqrt(ctx.divisors[N] + 0.0)
            arg = np.abs(ctx.omega * n)[:, None] - wt[None, :]
            ev._prop = ev._prop * cumulative_partition(arg, cap, C0)
        cache[key] = ev
    return cache[key]


def _has_hole(sk):
    if sk == HOLE:
        return True
    if sk[0] in ("w", "v"):
        return any(_has_hole(c) for c in sk[2])
    if sk[0] == "nu":
        return _has_hole(sk[2])
    return False


class SelfEnergyEvaluator:
    """Evaluates one-hole shapes for a fixed entering momentum, argument and scale cap.

    ``cap`` restricts every internal off-diagonal propagator to scales <= cap
    through the cumulative partition; ``None`` means no restriction.
    """

    def __init__(self, ctx, n_in, m_in, x, cap=None, C0=0.01):
        if ctx.j != 1:
            raise DomainError("self-energy evaluation is implemented in the j = 1 frame")
        N = ctx.N
        if abs(n_in) > N or abs(m_in) > N or m_in == 0:
            raise DomainError("entering momentum outside the cutoff")
        self.ctx, self.n_in, self.m_in, self.x = ctx, n_in, m_in, float(x)
        self.flat = _flat_evaluator(ctx, cap, C0)
        self.spectral = SpectralProducts(N, 2 * ctx.max_degree + 1)
        n = np.arange(-N, N + 1)
        mask = (np.abs(n)[:, None] != np.abs(n)[None, :]) & (n[None, :] != 0)
        wt2 = ctx.divisors + ctx.omega ** 2 * n[:, None] ** 2
        wt = np.sqrt(wt2[0])
        shifted = ctx.omega * (n - n_in) + self.x
        path_den = -(shifted[:, None] ** 2) + wt2
        # chains: an internal path line carrying the entering momentum up to the sign of m
        chain = (n[:, None] == n_in) & (np.abs(n)[None, :] == abs(m_in))
        path_mask = mask & ~chain
        self.path_prop = np.zeros_like(path_den)
        self.path_prop[path_mask] = 1.0 / path_den[path_mask]
        if cap is not None:
            path_arg = np.abs(shifted)[:, None] - wt[None, :]
            self.path_prop = self.path_prop * cumulative_partition(path_arg, cap, C0)
        self._path_tables = {}

    def _child(self, sk):
        return self.path_table(sk) if _has_hole(sk) else self.flat.table(sk)

    def _product(self, children):
        if len(children) == 1:
            return self._child(children[0])
        acc = None
        for ch in children:
            if _has_hole(ch):
                f = self.spectral.spectrum(ch, self.path_table(ch))
            else:
                f = self.flat.spectral.spectrum(ch, self.flat.table(ch))
            acc = f if acc is None else acc * f
        return self.spectral.crop(acc, len(children))

    def path_table(self, sk, root=False):
        key = (sk, root)
        if key in self._path_tables:
            return self._path_tables[key]
        ctx, N = self.ctx, self.ctx.N
        kind = sk[0]
        if sk == HOLE:
            t = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
            t[self.n_in + N, self.m_in + N] = 1.0
        elif kind == "w":
            t = ctx.p_couplings[sk[1] - 1] * self._product(sk[2])
        elif kind == "nu":
            child = self._child(sk[2])
            t = ctx.nu_a[None, :] * child if sk[1] == "a" else ctx.nu_b[None, :] * child[:, ::-1]
        elif kind == "v":
            P = self._product(sk[2])
            # (0, 0) is not a Dirichlet mode; on tables odd in m it vanishes by itself,
            # but the hole breaks that parity, so drop it on both sides of the node
            P[N, N] = 0.0
            t = self.flat._apply_diagonal(P, -ctx.q_couplings[sk[1] - 1])
            t[N, N] = 0.0
        else:
            raise DomainError(f"shape {sk!r} has no entering line")
        if kind in ("w", "nu") and not root:
            t = t * self.path_prop
        self._path_tables[key] = t
        return t

    def value(self, sk):
        """(type-a value, type-b value) of one shape."""
        t = self.path_table(sk, root=True)
        N = self.ctx.N
        return t[self.n_in + N, self.m_in + N], t[self.n_in + N, -self.m_in + N]

    def total(self, shapes):
        a = b = 0.0j
        for sk in shapes:
            va, vb = self.value(sk)
            a += va
            b += vb
        return a, b


def _real(z, what):
    if abs(z.imag) > 1e-9 * max(1.0, abs(z.real)):
        raise NonConvergenceError(f"{what} has an imaginary part {z.imag:.3e}")
    return float(z.real)


def localization_point(ctx, m, sigma):
    """Argument sigma * omega_t(m) and the integer momentum sigma |m| used for the discrete parts."""
    wt = math.sqrt(ctx.divisors[ctx.N, m + ctx.N])
    return sigma * wt, sigma * abs(m)


def self_energy_value(T, x, m, ctx, n=None, kind="a", cap=None, C0=0.01):
    """Value of a self-energy shape at argument x for entering momentum (n, m)."""
    if n is None:
        n = int(round(x / ctx.omega))
    va, vb = SelfEnergyEvaluator(ctx, n, m, x, cap, C0).value(T)
    return _real(va if kind == "a" else vb, "self-energy value")


def regularize(T, x, m, ctx, n=None, kind="a"):
    """R V = V(x) - V(sgn(n) omega_t(m)) at the same integer n.

    Returns ``(difference, quadrature)`` where the second entry is the
    five-point Gauss form (x - x0) * int_0^1 V'(x0 + t (x - x0)) dt with V'
    from central differences.
    """
    if n is None:
        n = int(round(x / ctx.omega))
    sgn = 1.0 if n >= 0 else -1.0
    x0 = sgn * math.sqrt(ctx.divisors[ctx.N, m + ctx.N])
    diff = self_energy_value(T, x, m, ctx, n, kind) - self_energy_value(T, x0, m, ctx, n, kind)
    nodes, weights = GAUSS_5
    step = 1e-5
    quad = 0.0
    for t, w in zip(0.5 * (nodes + 1.0), 0.5 * weights):
        y = x0 + t * (x - x0)
        dv = (self_energy_value(T, y + step, m, ctx, n, kind) - self_energy_value(T, y - step, m, ctx, n, kind)) / (2 * step)
        quad += w * dv
    return diff, (x - x0) * quad


def localized_sum(ctx, m, sigma, shapes, cap=None, C0=0.01):
    x, n = localization_point(ctx, m, sigma)
    a, b = SelfEnergyEvaluator(ctx, n, m, x, cap, C0).total(shapes)
    return _real(a, "type-a sum"), _real(b, "type-b sum")


def _scale_is_empty(ctx, m, h, C0):
    """True when no admissible line argument falls in the support of the scale-h member.

    Admissible means off-diagonal with m' != 0 and, on the hole path, not a chain line,
    matching the masks of the propagators the sums actually use.
    """
    N = ctx.N
    n = np.arange(-N, N + 1)
    wt = np.sqrt(ctx.divisors[N] + 0.0)
    mask = (np.abs(n)[:, None] != np.abs(n)[None, :]) & (n[None, :] != 0)
    args = [np.where(mask, np.abs(ctx.omega * n)[:, None] - wt[None, :], np.inf)]
    for sigma in (1, -1):
        x, n_in = localization_point(ctx, m, sigma)
        chain = (n[:, None] == n_in) & (np.abs(n)[None, :] == abs(m))
        path = np.abs(ctx.omega * (n - n_in) + x)[:, None] - wt[None, :]
        args.append(np.where(mask & ~chain, path, np.inf))
    lo, hi = 2.0 ** (-h - 1) * C0, 2.0 ** (-h + 1) * C0
    return not any(np.any((np.abs(a) > lo) & (np.abs(a) < hi)) for a in args)


def beta_function(h, m, ctx, shapes, C0=0.01):
    """(beta_a, beta_b) at scale h: 2^{h+1} times the sigma-average of the scale-h localized sums."""
    if h < -1:
        raise DomainError("scales start at -1")
    if h >= 0 and _scale_is_empty(ctx, m, h, C0):
        return 0.0, 0.0
    out = np.zeros(2)
    for sigma in (1, -1):
        upper = np.array(localized_sum(ctx, m, sigma, shapes, h, C0))
        lower = np.array(localized_sum(ctx, m, sigma, shapes, h - 1, C0)) if h >= 0 else 0.0
        out += 0.5 * (upper - lower)
    out *= 2.0 ** (h + 1)
    return float(out[0]), float(out[1])


@dataclass(eq=False)
class CountertermTable:
    """nu[c][h + 1, |m|] for c in {a, b}, h = -1..h_max, |m| = 0..N (column 0 unused)."""

    h_max: int
    N: int
    nu_a: np.ndarray
    nu_b: np.ndarray
    beta_a: np.ndarray
    beta_b: np.ndarray
    gamma: float = 0.0
    epsilon: float = 0.0
    K_se: int = 2
    C0: float = 0.01
    changes: list = field(default_factory=list)

    @classmethod
    def zeros(cls, h_max, N, **kw):
        z = lambda: np.zeros((h_max + 2, N + 1))
        return cls(h_max, N, z(), z(), z(), z(), **kw)

    def value(self, h, m, c="a"):
        arr = self.nu_a if c == "a" else self.nu_b
        return float(arr[h + 1, abs(m)])

    def rows(self, h=-1):
        """Counterterm rows indexed by |m| = 0..N for both types at scale h."""
        return self.nu_a[h + 1].copy(), self.nu_b[h + 1].copy()

    @property
    def nu(self):
        """Frequency shift nu_m = nu_a - nu_b at m = 1..N."""
        return self.nu_a[0, 1:] - self.nu_b[0, 1:]

    def sup(self):
        return float(max(np.max(np.abs(self.nu_a)), np.max(np.abs(self.nu_b))))

    def ratios(self):
        """Successive ratios of the sup-changes; an exact zero following a zero counts as 0."""
        out = []
        for prev, cur in zip(self.changes, self.changes[1:]):
            out.append(0.0 if cur == 0.0 else (cur / prev if prev > 0 else math.inf))
        return out

    def to_json(self):
        return json.dumps(
            {
                "h_max": self.h_max,
                "N": self.N,
                "epsilon": self.epsilon,
                "gamma": self.gamma,
                "K_se": self.K_se,
                "C0": self.C0,
                "nu_a": self.nu_a.tolist(),
                "nu_b": self.nu_b.tolist(),
                "beta_a": self.beta_a.tolist(),
                "beta_b": self.beta_b.tolist(),
                "changes": self.changes,
            }
        )


def _shapes_up_to(K_se):
    out = []
    for k in range(1, K_se + 1):
        out.extend(self_energy_shapes(k))
    return tuple(out)


def _counterterms_from_beta(beta, h_max):
    """Scale-indexed counterterms with nu at h_max set to zero.

    nu_{-1} = -sum_{k=-1}^{h_max-1} 2^{-k-1} beta_k and, for h >= 0,
    nu_h = -2^h sum_{k=h}^{h_max-1} 2^{-k-1} beta_k.
    """
    nu = np.zeros_like(beta)
    for h in range(-1, h_max):
        tail = sum(2.0 ** (-k - 1) * beta[k + 1] for k in range(h, h_max))
        nu[h + 1] = -(2.0 ** max(h, 0) if h >= 0 else 1.0) * tail
    return nu


def nu_fixed_point(rctx, gamma=0.0, q_max=20, tol=1e-14, min_steps=4):
    """Iterate the counterterm map until the sup-change falls below tol."""
    N, h_max = rctx.N, rctx.h_max
    shapes = _shapes_up_to(rctx.K_se)
    table = CountertermTable.zeros(h_max, N, gamma=gamma, epsilon=rctx.epsilon, K_se=rctx.K_se, C0=rctx.C0)
    rising = 0
    for q in range(1, q_max + 1):
        nu_a_rows, nu_b_rows = table.rows(-1)
        ctx = rctx.tree_context(nu_a_rows, nu_b_rows, gamma)
        beta_a = np.zeros((h_max + 2, N + 1))
        beta_b = np.zeros((h_max + 2, N + 1))
        for m in range(1, N + 1):
            for h in range(-1, h_max):
                beta_a[h + 1, m], beta_b[h + 1, m] = beta_function(h, m, ctx, shapes, rctx.C0)
        new_a = _counterterms_from_beta(beta_a, h_max)
        new_b = _counterterms_from_beta(beta_b, h_max)
        change = float(max(np.max(np.abs(new_a - table.nu_a)), np.max(np.abs(new_b - table.nu_b))))
        if table.changes and change > table.changes[-1]:
            rising += 1
            if rising >= 3:
                raise NonConvergenceError("counterterm map is not contracting")
        else:
            rising = 0
        table.nu_a, table.nu_b, table.beta_a, table.beta_b = new_a, new_b, beta_a, beta_b
        table.changes.append(change)
        if change <= tol and q >= min_steps:
            return table
    if table.changes[-1] > tol:
        raise NonConvergenceError(f"counterterm map did not converge in {q_max} steps")
    return table


def _gamma_update(rctx, table, gamma, K):
    nu_a, nu_b = table.rows(-1)
    state = expand(rctx.config(K), ground=rctx.ground, freqs=rctx.freqs, nu=nu_a, nu_b=nu_b, gamma=gamma)
    gs = rctx.ground
    a0 = gs.a0.resized(rctx.N)
    La0 = apply_L(gs, a0)
    total = 0.0
    for k in range(1, K + 1):
        Lf = state.A[k] + La0 * (6.0 * state.C[k])
        total += average(a0, Lf)
    return total / gs.r0, state


def gamma_fixed_point(rctx, K=3, tol=1e-14, q_max=30):
    """Self-consistent gamma with the counterterms recomputed at every iterate.

    Returns ``(gamma, table, differences)``.
    """
    gamma = 0.0
    diffs = []
    table = None
    for _ in range(q_max):
        table = nu_fixed_point(rctx, gamma)
        new, _ = _gamma_update(rctx, table, gamma, K)
        diffs.append(abs(new - gamma))
        gamma = new
        if len(diffs) >= 3 and diffs[-1] > diffs[-2] > diffs[-3]:
            raise NonConvergenceError("gamma map is not contracting")
        if diffs[-1] <= tol:
            table = nu_fixed_point(rctx, gamma)
            table.gamma = gamma
            return gamma, table, diffs
    raise NonConvergenceError(f"gamma iteration did not converge in {q_max} steps")


def nu_gamma_sensitivity(rctx, gamma1, gamma2):
    """sup over h, m, type of |nu(gamma1) - nu(gamma2)| / |gamma1 - gamma2|."""
    if gamma1 == gamma2:
        return 0.0
    t1 = nu_fixed_point(rctx, gamma1)
    t2 = nu_fixed_point(rctx, gamma2)
    d = max(np.max(np.abs(t1.nu_a - t2.nu_a)), np.max(np.abs(t1.nu_b - t2.nu_b)))
    return float(d) / abs(gamma1 - gamma2)


def verify_resummed_solution(rctx, table, gamma, orders=(1, 2, 3)):
    """Residuals of the renormalized equations at mu = 1 for each truncation order, and the
    defect of the counterterm-insertion identity (root counterterm shapes against the
    recombined lower layer)."""
    nu_a, nu_b = table.rows(-1)
    report = {"residual": {}, "insertion_defect": 0.0}
    K_top = max(orders)
    state = expand(rctx.config(K_top), ground=rctx.ground, freqs=rctx.freqs, nu=nu_a, nu_b=nu_b, gamma=gamma)
    for K in orders:
        sub = expand(rctx.config(K), ground=rctx.ground, freqs=rctx.freqs, nu=nu_a, nu_b=nu_b, gamma=gamma)
        _, res = evaluate_and_residual(sub, 1.0)
        report["residual"][K] = res
    ev = ShapeEvaluator(TreeContext.from_state(state))
    N = rctx.N
    n = np.arange(-N, N + 1)
    mask = (np.abs(n)[:, None] != np.abs(n)[None, :]) & (n[None, :] != 0)
    worst = 0.0
    for k in range(2, min(K_top, 3) + 1):
        roots = sum(ev.table(sk) for sk in enumerate_shapes(k, "w") if sk[0] == "nu")
        prev = state.orders[k - 1].coeffs * mask
        recombined = (state.nu_row("a")[None, :] * prev + state.nu_row("b")[None, :] * prev[:, ::-1]) * ev._prop
        scale = max(float(np.max(np.abs(recombined))), 1e-300)
        worst = max(worst, float(np.max(np.abs(roots - recombined))) / scale if np.any(recombined) else float(np.max(np.abs(roots))))
    report["insertion_defect"] = worst
    return report
