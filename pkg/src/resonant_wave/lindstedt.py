"""Order-by-order construction of the coefficients u^{(k)}_{n,m}.

The unknown is expanded as u = sum_k mu^k u^{(k)}.  Order zero is the
ground state placed on the two diagonals, u^{(0)}_{n,+-n} = +-a0_n.  At each
order the off-diagonal part w^{(k)} follows from the lower orders by one
division, and the diagonal part A^{(k)} solves the linearised profile
equation through the Green operator.

For a general odd nonlinearity phi(u) = sum_k Phi_k u^{2k+1} the amplitude
is scaled by sqrt(eps / |Phi_1|) and time by omega = sqrt(1 - sign(Phi_1) eps),
which leaves

    n^2 a_n = [g(u)]_{n,n}
    (-omega^2 n^2 + m^2) w_{n,m} = sign(Phi_1) eps [g(u)]_{n,m}

with g(u) = sum_k c_k eps^{k-1} u^{2k+1}, c_k = sign(Phi_1) Phi_k / |Phi_1|^k.
The term of degree 2k+1 is counted as order k - 1 in the Q rows and
order k in the P rows, so the cubic case reproduces the plain recursion.

A harmonic index j > 1 is handled in the frame U(t, x) with
u(t, x) = j U(jt, jx): only the couplings of degree >= 5 change, by the
factor j^{2(k-1)}.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve

from .errors import BudgetError, DomainError, PreconditionError, SmallDivisorError
from .frequencies import FrequencyTable
from .qsolver import GroundState, apply_L, build_ground_state, solve_Ak
from .series import FourierSeries1D, FourierSeries2D, truncate_centred

DEFAULT_BUDGET = 400_000


@dataclass(frozen=True)
class ExpansionConfig:
    K: int
    N: int
    epsilon: float
    j: int = 1
    phi: tuple = (1.0,)
    mu: float = 1.0
    divisor_floor: float = 1e-12
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(p) for p in self.phi))
        if self.K < 1:
            raise DomainError("expansion order K must be at least 1")
        if self.N < 2:
            raise DomainError("cutoff N must be at least 2")
        if self.j < 1:
            raise DomainError("harmonic index j must be a positive integer")
        if not self.phi or self.phi[0] == 0.0:
            raise DomainError("the cubic coefficient Phi_1 must be nonzero")
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise DomainError("epsilon must be finite and non-negative")
        if self.epsilon * (1.0 if self.phi[0] > 0 else -1.0) >= 1.0:
            raise DomainError("omega^2 = 1 - sign(Phi_1) eps must stay positive")
        if self.K * self.N ** 2 > self.budget:
            raise BudgetError(f"K N^2 = {self.K * self.N ** 2} exceeds the budget {self.budget}")

    @property
    def sign(self):
        return 1.0 if self.phi[0] > 0 else -1.0

    @property
    def omega(self):
        return math.sqrt(1.0 - self.sign * self.epsilon)

    def coupling(self, degree_index):
        """Coefficient of u^{2k+1} in g for k = degree_index, in the U frame."""
        F = abs(self.phi[0])
        k = degree_index
        c = self.sign * self.phi[k - 1] / F ** k
        return c * (self.j * self.j * self.epsilon) ** (k - 1)

    @property
    def degrees(self):
        return range(1, len(self.phi) + 1)


def _odd_series_from_diagonal(table, N):
    """Series n -> table[n, n] of a centred 2D table with cutoff N."""
    idx = np.arange(2 * N + 1)
    return FourierSeries1D(N, table[idx, idx], "odd", True)


def _diagonal_layer(A, N):
    """2D table with (n, n) = A_n and (n, -n) = -A_n."""
    c = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
    Ar = A.resized(N).coeffs
    idx = np.arange(2 * N + 1)
    c[idx, idx] = Ar
    c[idx, idx[::-1]] -= Ar
    # (0, 0) was written twice with opposite signs; it is zero for odd A anyway
    return FourierSeries2D(N, c)


def _offdiag_mask(N):
    n = np.arange(-N, N + 1)
    return (np.abs(n)[:, None] != np.abs(n)[None, :]) & (n[None, :] != 0)


def _product(a, b):
    return convolve(a, b, mode="full")


@dataclass(eq=False)
class ExpansionState:
    """Coefficients computed so far together with the data they depend on.

    ``nu_a`` and ``nu_b`` are indexed by |m| = 0..N in the working frame
    (entry 0 unused).  ``gamma`` replaces the per-order constants C^{(k)}
    when set: C^{(1)} = gamma and C^{(k)} = 0 for k >= 2.
    """

    config: ExpansionConfig
    ground: GroundState
    freqs: FrequencyTable
    nu_a: np.ndarray
    nu_b: np.ndarray
    gamma: float = None
    orders: list = field(default_factory=list)
    A: list = field(default_factory=list)
    C: list = field(default_factory=list)
    _powers: dict = field(default_factory=dict, repr=False)

    @property
    def N(self):
        return self.config.N

    @property
    def computed_order(self):
        return len(self.orders) - 1

    def divisors(self):
        """Table of -omega^2 n^2 + omega_t(jm)^2 / j^2 in the working frame."""
        N, j = self.N, self.config.j
        n = np.arange(-N, N + 1, dtype=float)
        wt2 = self.freqs.squared(j * np.arange(-N, N + 1)) / (j * j)
        return -self.config.omega ** 2 * n[:, None] ** 2 + wt2[None, :]

    def nu_row(self, which):
        """Counterterm as a row over m = -N..N."""
        arr = self.nu_a if which == "a" else self.nu_b
        return arr[np.abs(np.arange(-self.N, self.N + 1))]

    def power(self, s, k):
        """[u^s]^{(k)}: the order-k part of the s-th power, untruncated."""
        if s == 1:
            return self.orders[k].coeffs
        key = (s, k)
        if key not in self._powers:
            total = None
            for k1 in range(k + 1):
                term = _product(self.power(s - 1, k1), self.orders[k - k1].coeffs)
                total = term if total is None else _pad_add(total, term)
            self._powers[key] = total
        return self._powers[key]

    def require(self, k):
        if self.computed_order < k:
            raise PreconditionError(f"order {k} requested but only {self.computed_order} computed")

    def to_json(self):
        return json.dumps(
            {
                "config": {**self.config.__dict__, "phi": list(self.config.phi)},
                "orders": [json.loads(u.to_json()) for u in self.orders],
                "A": [json.loads(a.to_json()) for a in self.A],
                "C": list(self.C),
                "nu_a": self.nu_a.tolist(),
                "nu_b": self.nu_b.tolist(),
                "omega_t": self.freqs.omega_t.tolist(),
                "gamma": self.gamma,
            },
            sort_keys=True,
        )

    def magnitudes_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "max_abs", "ratio"])
        for row in order_magnitudes(self):
            writer.writerow(row)
        return buf.getvalue()


def _pad_add(a, b):
    if a.shape == b.shape:
        return a + b
    size = max(a.shape[0], b.shape[0])
    return truncate_centred(a, (size - 1) // 2) + truncate_centred(b, (size - 1) // 2)


def _trim(table, N):
    return truncate_centred(table, N)


def initial_state(config, ground=None, freqs=None, nu=None, nu_b=None, gamma=None):
    """Order-zero state.

    ``nu`` gives nu_a (default zero); ``nu_b`` defaults to zero, so a hand-set
    counterterm nu is applied entirely through the type-a term.
    """
    N = config.N
    if ground is None:
        ground = build_ground_state(max(N, 16))
    if freqs is None:
        freqs = FrequencyTable.unperturbed(config.j * N, config.epsilon)
    nu_a = np.zeros(N + 1) if nu is None else np.asarray(nu, dtype=float).copy()
    nu_b = np.zeros(N + 1) if nu_b is None else np.asarray(nu_b, dtype=float).copy()
    if nu_a.shape != (N + 1,) or nu_b.shape != (N + 1,):
        raise DomainError(f"counterterm arrays must have length N + 1 = {N + 1}")
    state = ExpansionState(config, ground, freqs, nu_a, nu_b, gamma)
    a0 = ground.a0.resized(N)
    state.orders.append(_diagonal_layer(a0, N))
    state.A.append(a0)
    state.C.append(0.0)
    return state


def w_k(state, k):
    """Off-diagonal layer w^{(k)}, from orders below k."""
    if k < 1:
        raise DomainError("w layers start at order 1")
    state.require(k - 1)
    cfg, N = state.config, state.N
    mask = _offdiag_mask(N)
    num = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
    if k >= 2:
        prev = state.orders[k - 1].coeffs * mask
        num += state.nu_row("a")[None, :] * prev + state.nu_row("b")[None, :] * prev[:, ::-1]
    for deg in cfg.degrees:
        if k - deg < 0:
            break
        num += cfg.sign * cfg.epsilon * cfg.coupling(deg) * _trim(state.power(2 * deg + 1, k - deg), N)
    den = state.divisors()
    bad = mask & (np.abs(den) < cfg.divisor_floor)
    if np.any(bad):
        i, jj = np.argwhere(bad)[0]
        n, m = int(i - N), int(jj - N)
        raise SmallDivisorError(
            f"divisor {den[i, jj]:.3e} below floor at (n, m) = ({n}, {m})", n, m, float(den[i, jj])
        )
    w = np.zeros_like(num)
    w[mask] = num[mask] / den[mask]
    return FourierSeries2D(N, w)


def f_k(state, k):
    """Right-hand side of the linearised profile equation at order k.

    Requires the layer of order k to hold w^{(k)} only, so that the
    terms linear in A^{(k)} are left out.
    """
    if k < 1:
        raise DomainError("f is defined for k >= 1")
    state.require(k)
    cfg, N = state.config, state.N
    total = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
    for deg in cfg.degrees:
        order = k - deg + 1
        if order < 0:
            break
        total += cfg.coupling(deg) * _trim(state.power(2 * deg + 1, order), N)
    return _odd_series_from_diagonal(-total, N)


def _invalidate(state, k):
    for key in [key for key in state._powers if key[1] >= k]:
        del state._powers[key]


def advance_order(state, k=None):
    """Compute order k = computed_order + 1 and append it to the state."""
    k = state.computed_order + 1 if k is None else k
    if k != state.computed_order + 1:
        raise PreconditionError(f"next order is {state.computed_order + 1}, not {k}")
    if k > state.config.K:
        raise DomainError(f"order {k} exceeds configured K = {state.config.K}")
    w = w_k(state, k)
    state.orders.append(w)
    _invalidate(state, k)
    f = f_k(state, k)
    if state.gamma is None:
        A, C = solve_Ak(state.ground, f)
    else:
        C = state.gamma if k == 1 else 0.0
        A = apply_L(state.ground, f - state.ground.a0.resized(f.N) * (6.0 * C))
    state.orders[k] = w + _diagonal_layer(A, state.N)
    _invalidate(state, k)
    state.A.append(A)
    state.C.append(float(C))
    return state


def expand(config, **kwargs):
    """Initial state advanced through order K."""
    state = initial_state(config, **kwargs)
    for _ in range(config.K):
        advance_order(state)
    return state


def summed(state, mu=None, K=None):
    mu = state.config.mu if mu is None else mu
    K = state.computed_order if K is None else K
    total = state.orders[0].coeffs.copy()
    for k in range(1, K + 1):
        total = total + mu ** k * state.orders[k].coeffs
    return FourierSeries2D(state.N, total)


def equation_defects(u, config, divisors=None, nu_a_row=None, nu_b_row=None, mu=1.0):
    """Defects of the Q rows (as a series in n) and P entries (as a table).

    With ``mu`` = 1 and no counterterms these are the defects of the
    scaled wave equation itself.
    """
    N = u.N
    c = u.coeffs
    mask = _offdiag_mask(N)
    n = np.arange(-N, N + 1, dtype=float)
    if divisors is None:
        divisors = -config.omega ** 2 * n[:, None] ** 2 + n[None, :] ** 2
    q_rhs = np.zeros_like(c)
    p_rhs = np.zeros_like(c)
    square = _product(c, c)
    power = c
    for deg in config.degrees:
        power = _product(power, square)
        trimmed = _trim(power, N)
        q_rhs += mu ** (deg - 1) * config.coupling(deg) * trimmed
        p_rhs += mu ** deg * config.sign * config.epsilon * config.coupling(deg) * trimmed
    idx = np.arange(2 * N + 1)
    q_def = n ** 2 * c[idx, idx] - q_rhs[idx, idx]
    w = c * mask
    lhs = divisors * w
    if nu_a_row is not None:
        lhs = lhs - mu * (nu_a_row[None, :] * w + nu_b_row[None, :] * w[:, ::-1])
    p_def = (lhs - p_rhs) * mask
    return q_def, p_def


def evaluate_and_residual(state, mu=None):
    """Sum of the series at ``mu`` and the max defect of the Q and P equations."""
    mu = state.config.mu if mu is None else mu
    state.require(0)
    u = summed(state, mu)
    q_def, p_def = equation_defects(
        u, state.config, state.divisors(), state.nu_row("a"), state.nu_row("b"), mu
    )
    return u, float(max(np.max(np.abs(q_def)), np.max(np.abs(p_def))))


def physical_solution(state, mu=None):
    """Embed the working-frame sum into the j = 1 grid: u_{jn, jm} = j U_{n,m}."""
    u = summed(state, mu)
    j, N = state.config.j, state.N
    M = j * N
    c = np.zeros((2 * M + 1, 2 * M + 1), dtype=complex)
    idx = M + j * np.arange(-N, N + 1)
    c[np.ix_(idx, idx)] = j * u.coeffs
    return FourierSeries2D(M, c)


def order_magnitudes(state):
    """Rows (k, max|u^{(k)}|, ratio to the previous order)."""
    rows = []
    prev = None
    for k, u in enumerate(state.orders):
        mag = float(np.max(np.abs(u.coeffs)))
        ratio = mag / prev if prev not in (None, 0.0) else float("nan")
        rows.append((k, mag, ratio))
        prev = mag
    return rows


def growth_diagnostic(config, ground=None, nu=None, nu_b=None, freqs=None):
    """Per-order magnitudes for the expansion with the given counterterms.

    With the defaults (no counterterms, omega_t = |m|) this shows the bare
    growth of the coefficients.  A small divisor stops the run; the rows
    computed so far are returned and the failing order is reported.
    """
    if config.K > 10:
        raise DomainError("growth diagnostic is limited to K <= 10")
    state = initial_state(config, ground=ground, nu=nu, nu_b=nu_b, freqs=freqs)
    failed = None
    for k in range(1, config.K + 1):
        try:
            advance_order(state)
        except SmallDivisorError as exc:
            failed = {"order": k, "n": exc.n, "m": exc.m, "divisor": exc.value}
            break
    return {"rows": order_magnitudes(state), "failed": failed}
