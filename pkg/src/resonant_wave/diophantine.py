"""Diophantine and Mel'nikov checks on finite grids, and the excluded-measure scan.

Every check works on the finite grid 1 <= |n| <= n_max, 1 <= |m| <= m_max
only; reports carry the grid so callers can state that caveat.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class DiophantineParams:
    C0: float = 0.01
    tau: float = 2.5
    tau0: float = 1.2
    n_max: int = 64
    m_max: int = 64
    first_melnikov_only: bool = False

    def __post_init__(self):
        if not (0 < self.C0 <= 0.5):
            raise DomainError("C0 must lie in (0, 1/2]")
        if self.tau <= 1 or self.tau0 <= 1:
            raise DomainError("exponents must exceed 1")
        if self.first_melnikov_only:
            if self.tau > 2:
                raise DomainError("the first-condition-only mode takes tau in (1, 2]")
        elif self.tau <= self.tau0 + 1:
            raise DomainError("tau must exceed tau0 + 1 when both conditions are imposed")
        if self.n_max < 1 or self.m_max < 1:
            raise DomainError("grid bounds must be positive")

    def with_grid(self, n_max, m_max=None):
        d = asdict(self)
        d.update(n_max=int(n_max), m_max=int(m_max if m_max is not None else n_max))
        return DiophantineParams(**d)


def _nearest_candidates(target, n, m_max):
    """Integers m in [1, m_max], m != n, closest to target (a few per n)."""
    base = np.floor(target).astype(int)
    cands = base[:, None] + np.arange(-1, 3)[None, :]
    ok = (cands >= 1) & (cands <= m_max) & (cands != n[:, None])
    return cands, ok


def omega_margin(epsilon, params):
    """min over the grid of |omega n - m| - 2 C0 n^{-tau0}, with the minimising (n, m)."""
    if epsilon < 0 or epsilon >= 1:
        raise DomainError("epsilon must lie in [0, 1)")
    omega = math.sqrt(1.0 - epsilon)
    n = np.arange(1, params.n_max + 1)
    cands, ok = _nearest_candidates(omega * n, n, params.m_max)
    gap = np.abs(omega * n[:, None] - cands)
    margin = np.where(ok, gap - 2.0 * params.C0 * n[:, None] ** (-params.tau0), np.inf)
    i, j = np.unravel_index(np.argmin(margin), margin.shape)
    return float(margin[i, j]), (int(n[i]), int(cands[i, j]))


def check_omega(epsilon, params):
    """|omega n +- m| >= 2 C0 |n|^{-tau0} on the grid, |m| != |n|.

    The '+' branch is at least |n| + 1 and never binds, so only m near
    omega n is examined.
    """
    return omega_margin(epsilon, params)[0] >= 0.0


def check_melnikov(freqs, epsilon, params):
    """First and second conditions on the grid; returns flags and the worst (n, m, m', margin)."""
    omega = math.sqrt(1.0 - epsilon)
    n = np.arange(1, params.n_max + 1, dtype=float)
    m = np.arange(1, params.m_max + 1)
    wt = np.asarray(freqs.value(m), dtype=float)
    bound = params.C0 * n ** (-params.tau)
    first_gap = np.abs(omega * n[:, None] - wt[None, :])
    first_ok_mask = np.abs(n[:, None]) != m[None, :]
    first_margin = np.where(first_ok_mask, first_gap - bound[:, None], np.inf)
    i, j = np.unravel_index(np.argmin(first_margin), first_margin.shape)
    worst = (int(n[i]), int(m[j]), None, float(first_margin[i, j]))
    first = bool(first_margin[i, j] >= 0.0)
    second = None
    if not params.first_melnikov_only:
        second = True
        for combo_sign in (1, -1):
            comb = wt[:, None] + combo_sign * wt[None, :]
            comb_idx = np.abs(m[:, None] + combo_sign * m[None, :])
            for k, nk in enumerate(n):
                gap = np.abs(omega * nk - np.abs(comb))
                allowed = comb_idx != int(nk)
                marg = np.where(allowed, gap - bound[k], np.inf)
                a, b = np.unravel_index(np.argmin(marg), marg.shape)
                if marg[a, b] < 0:
                    second = False
                if marg[a, b] < worst[3]:
                    worst = (int(nk), int(m[a]), int(combo_sign * m[b]), float(marg[a, b]))
    return {"first": first, "second": second, "worst": worst, "n_max": params.n_max, "m_max": params.m_max}


def resonance_intervals(eps0, params):
    """Exact excluded intervals in (0, eps0] from |omega n - m| < 2 C0 n^{-tau0} on the grid."""
    out = []
    for n in range(1, params.n_max + 1):
        delta = 2.0 * params.C0 * n ** (-params.tau0)
        for m in range(max(1, n - int(n * eps0) - 2), min(params.m_max, n + 1) + 1):
            if m == n:
                continue
            lo = 1.0 - ((m + delta) / n) ** 2
            hi = 1.0 - ((m - delta) / n) ** 2
            lo, hi = max(lo, 0.0), min(hi, eps0)
            if hi > lo:
                out.append((lo, hi, n, m))
    return sorted(out)


def _merge(intervals):
    merged = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [tuple(x) for x in merged]


def scan_n_max(eps0, params):
    """Grid bound used by the scan: resonances at epsilon need n of order 2/epsilon."""
    return max(params.n_max, int(math.ceil(40.0 / eps0)))


def scan_measure(eps0, grid_size, params=None, freq_provider=None):
    """Fraction of a uniform grid in (0, eps0] excluded by the conditions.

    ``freq_provider(epsilon)`` may return a frequency table; the point is
    then also checked against both Mel'nikov conditions.
    """
    if grid_size < 1000:
        raise DomainError("grid_size must be at least 1000")
    if not (0 < eps0 < 1):
        raise DomainError("eps0 must lie in (0, 1)")
    params = DiophantineParams() if params is None else params
    nm = scan_n_max(eps0, params)
    grid_params = params.with_grid(nm, nm + 1)
    eps = eps0 * np.arange(1, grid_size + 1) / grid_size
    rows = []
    excluded = np.zeros(grid_size, dtype=bool)
    for i, e in enumerate(eps):
        margin, (n, m) = omega_margin(e, grid_params)
        ok = margin >= 0
        worst = (n, m, None, margin)
        if ok and freq_provider is not None:
            rep = check_melnikov(freq_provider(e), e, params)
            ok = rep["first"] and rep["second"] is not False
            worst = rep["worst"]
        excluded[i] = not ok
        rows.append((float(e), bool(ok), float(worst[3]), worst[0], worst[1], worst[2]))
    step = eps0 / grid_size
    intervals = _merge([(float(e - step), float(e)) for e, x in zip(eps, excluded) if x])
    return {
        "fraction_excluded": float(np.mean(excluded)),
        "intervals": intervals,
        "exact_intervals": _merge([(lo, hi) for lo, hi, _, _ in resonance_intervals(eps0, grid_params)]),
        "n_max": nm,
        "m_max": nm + 1,
        "rows": rows,
    }


def scan_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["epsilon", "accepted", "worst_margin", "n", "m", "m_prime"])
    for row in report["rows"]:
        w.writerow(row)
    return buf.getvalue()


def intervals_json(report):
    return json.dumps({"n_max": report["n_max"], "m_max": report["m_max"], "intervals": report["intervals"]})
