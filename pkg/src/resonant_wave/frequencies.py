"""Renormalized frequencies and their self-consistent construction.

A frequency table stores omega_t[m] > 0 for 1 <= m <= N.  Modes above the
cutoff reuse the counterterm of the last stored mode, so
omega_t(m)^2 = m^2 + nu_N for |m| > N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MelnikovViolationError, NonConvergenceError


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    N: int
    omega_t: np.ndarray
    epsilon: float = 0.0
    generation: int = 0

    def __post_init__(self):
        w = np.array(self.omega_t, dtype=float)
        if w.shape != (self.N,):
            raise DomainError(f"expected {self.N} frequencies, got shape {w.shape}")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("renormalized frequencies must be finite and positive")
        w.setflags(write=False)
        object.__setattr__(self, "omega_t", w)

    @classmethod
    def unperturbed(cls, N, epsilon=0.0):
        return cls(N, np.arange(1, N + 1, dtype=float), epsilon, 0)

    @classmethod
    def from_nu(cls, nu, epsilon=0.0, generation=0):
        """Table with omega_t[m]^2 = m^2 + nu[m - 1]."""
        nu = np.asarray(nu, dtype=float)
        m = np.arange(1, nu.size + 1)
        sq = m * m + nu
        if np.any(sq <= 0):
            raise DomainError("m^2 + nu_m must stay positive")
        return cls(nu.size, np.sqrt(sq), epsilon, generation)

    @property
    def nu(self):
        m = np.arange(1, self.N + 1)
        return self.omega_t ** 2 - m * m

    def value(self, m):
        """omega_t at integer mode(s) m (even in m); m = 0 gives 0."""
        m_arr = np.abs(np.asarray(m, dtype=int))
        out = np.zeros(m_arr.shape)
        inside = (m_arr >= 1) & (m_arr <= self.N)
        out[inside] = self.omega_t[m_arr[inside] - 1]
        beyond = m_arr > self.N
        if np.any(beyond):
            out[beyond] = np.sqrt(m_arr[beyond].astype(float) ** 2 + self.nu[-1])
        return float(out) if np.ndim(m) == 0 else out

    def squared(self, m):
        return np.asarray(self.value(m)) ** 2

    def max_shift(self):
        """max over stored m of |m| * |omega_t - |m||, the constant in the C eps/|m| bound."""
        m = np.arange(1, self.N + 1)
        return float(np.max(m * np.abs(self.omega_t - m)))

    def to_rows(self):
        m = np.arange(1, self.N + 1)
        return [(int(k), float(w), float(n), float(mu_from_nu(n, w, int(k)))) for k, w, n in zip(m, self.omega_t, self.nu)]


def mu_from_nu(nu_m, omega_t_m, m):
    """Shift mu_m with omega_t_m + mu_m = |m| when omega_t_m^2 - nu_m = m^2.

    Written as -nu / (omega_t + sqrt(omega_t^2 - nu)) so that it solves
    mu^2 + 2 omega_t mu + nu = 0 without cancellation.
    """
    if m == 0:
        raise DomainError("mode 0 carries no frequency")
    radicand = omega_t_m * omega_t_m - nu_m
    if radicand <= 0:
        raise DomainError(f"omega_t^2 - nu = {radicand!r} is not positive at m={m}")
    return -nu_m / (omega_t_m + math.sqrt(radicand))


@dataclass
class FrequencyRun:
    table: FrequencyTable
    changes: list
    counterterms: object
    melnikov: list


def iterate_frequencies(epsilon, rctx, p_max=30, tol=1e-12, params=None, gamma=0.0):
    """Generations omega_t^{(p)2} = m^2 + nu_m(omega_t^{(p-1)}) from omega_t^{(0)} = |m|.

    Every generation is checked against the Mel'nikov conditions; a failure
    aborts with the generation and the worst triple.
    """
    from .diophantine import DiophantineParams, check_melnikov, check_omega
    from .renorm import nu_fixed_point

    params = DiophantineParams() if params is None else params
    if not check_omega(epsilon, params):
        raise MelnikovViolationError(f"epsilon = {epsilon!r} fails the condition on omega", 0, None)
    if abs(rctx.epsilon - epsilon) > 0:
        from dataclasses import replace

        rctx = replace(rctx, epsilon=epsilon)
    freqs = FrequencyTable.unperturbed(rctx.N, epsilon)
    changes, reports = [], []
    table = None
    for p in range(1, p_max + 1):
        table = nu_fixed_point(rctx.with_freqs(freqs), gamma, min_steps=1)
        new = FrequencyTable.from_nu(table.nu, epsilon, p)
        rep = check_melnikov(new, epsilon, params)
        reports.append(rep)
        if not rep["first"] or rep["second"] is False:
            raise MelnikovViolationError(f"generation {p} violates the Mel'nikov conditions", p, rep["worst"])
        change = float(np.max(np.abs(new.omega_t - freqs.omega_t)))
        changes.append(change)
        freqs = new
        if change <= tol:
            return FrequencyRun(freqs, changes, table, reports)
    raise NonConvergenceError(f"frequency iteration did not converge in {p_max} generations")


def fixed_point_defect(run, rctx, gamma=0.0):
    """max_m |omega_t_m^2 - nu_m(omega_t) - m^2| with nu recomputed at the final table."""
    from .renorm import nu_fixed_point

    nu = nu_fixed_point(rctx.with_freqs(run.table), gamma, min_steps=1).nu
    m = np.arange(1, run.table.N + 1)
    return float(np.max(np.abs(run.table.omega_t ** 2 - nu - m * m)))


def sensitivity_report(epsilon, rctx, freqs, gamma=0.0, modes=(1, 4, 8), step=1e-6, eps_step=None):
    """Finite-difference derivatives of nu_m in omega_t_{m'} and of mu_m in epsilon."""
    from dataclasses import replace

    from .renorm import nu_fixed_point

    base = rctx.with_freqs(freqs)
    N = freqs.N
    dnu = np.zeros((len(modes), N))
    for row, mp in enumerate(modes):
        vals = []
        for sgn in (1.0, -1.0):
            w = freqs.omega_t.copy()
            w[mp - 1] += sgn * step
            vals.append(nu_fixed_point(base.with_freqs(FrequencyTable(N, w, epsilon)), gamma, min_steps=1).nu)
        dnu[row] = (vals[0] - vals[1]) / (2 * step)
    h = 1e-3 * epsilon if eps_step is None else eps_step
    mus = []
    for e in (epsilon + h, epsilon - h):
        nu = nu_fixed_point(replace(base, epsilon=e), gamma, min_steps=1).nu
        mus.append(np.array([mu_from_nu(nu[k - 1], freqs.omega_t[k - 1], k) for k in range(1, N + 1)]))
    dmu = (mus[0] - mus[1]) / (2 * h)
    return {
        "modes": list(modes),
        "dnu_domega": dnu,
        "max_dnu_over_eps": float(np.max(np.abs(dnu)) / epsilon) if epsilon > 0 else 0.0,
        "dmu_deps": dmu,
        "max_dmu_deps": float(np.max(np.abs(dmu))),
    }


def generation_csv(run):
    lines = ["generation,m,omega_t,nu,mu"]
    for m, w, nu, mu in run.table.to_rows():
        lines.append(f"{run.table.generation},{m},{w!r},{nu!r},{mu!r}")
    return "\n".join(lines) + "\n"
