import json
import math

import numpy as np
import pytest

from resonant_wave.diophantine import (
    DiophantineParams,
    check_melnikov,
    check_omega,
    intervals_json,
    omega_margin,
    resonance_intervals,
    scan_csv,
    scan_measure,
)
from resonant_wave.errors import DomainError
from resonant_wave.frequencies import FrequencyTable


def loop_omega_margin(eps, p):
    omega = math.sqrt(1 - eps)
    best = math.inf
    for n in range(1, p.n_max + 1):
        for m in range(1, p.m_max + 1):
            if m != n:
                best = min(best, abs(omega * n - m) - 2 * p.C0 * n ** -p.tau0)
    return best


def loop_melnikov(freqs, eps, p):
    omega = math.sqrt(1 - eps)
    first = second = math.inf
    for n in range(1, p.n_max + 1):
        bound = p.C0 * n ** -p.tau
        for m in range(1, p.m_max + 1):
            wm = freqs.value(m)
            if m != n:
                first = min(first, abs(omega * n - wm) - bound)
            for mp in range(1, p.m_max + 1):
                wp = freqs.value(mp)
                for s in (1, -1):
                    if abs(m + s * mp) != n:
                        second = min(second, abs(omega * n - abs(wm + s * wp)) - bound)
    return first, second


@pytest.mark.parametrize("eps", [1e-3, 0.05, 0.3, 11 / 36])
def test_omega_margin_matches_loop(eps):
    p = DiophantineParams(n_max=30, m_max=30)
    margin, (n, m) = omega_margin(eps, p)
    assert margin == pytest.approx(loop_omega_margin(eps, p), abs=1e-15)
    assert margin == pytest.approx(abs(math.sqrt(1 - eps) * n - m) - 2 * p.C0 * n ** -p.tau0, abs=1e-15)


def test_exact_resonance_rejected():
    p = DiophantineParams(n_max=30, m_max=30)
    assert not check_omega(11 / 36, p)  # omega * 6 = 5
    assert check_omega(1e-3, p)


@pytest.mark.parametrize("eps", [1e-3, 0.05, 0.3])
def test_melnikov_matches_loop(eps):
    p = DiophantineParams(n_max=12, m_max=12)
    freqs = FrequencyTable.from_nu(0.01 * np.sin(np.arange(1, 13)), eps)
    rep = check_melnikov(freqs, eps, p)
    first, second = loop_melnikov(freqs, eps, p)
    assert rep["first"] == (first >= 0)
    assert rep["second"] == (second >= 0)
    assert rep["worst"][3] == pytest.approx(min(first, second), abs=1e-14)
    assert (rep["n_max"], rep["m_max"]) == (12, 12)


def test_first_condition_only_mode():
    p = DiophantineParams(tau=1.8, first_melnikov_only=True, n_max=12, m_max=12)
    rep = check_melnikov(FrequencyTable.unperturbed(12), 0.05, p)
    assert rep["second"] is None and rep["worst"][2] is None


def test_melnikov_violation_detected():
    p = DiophantineParams(n_max=12, m_max=12)
    eps = 11 / 36
    assert check_melnikov(FrequencyTable.unperturbed(12), eps, p)["first"] is False


def test_interval_endpoints_are_boundary_points():
    p = DiophantineParams(n_max=200, m_max=201)
    ivs = resonance_intervals(0.05, p)
    assert ivs
    for lo, hi, n, m in ivs:
        delta = 2 * p.C0 * n ** -p.tau0
        for e in (lo, hi):
            if 0 < e < 0.05:
                assert abs(abs(math.sqrt(1 - e) * n - m) - delta) <= 1e-12
        mid = 0.5 * (lo + hi)
        assert abs(math.sqrt(1 - mid) * n - m) < delta


def test_scan_points_agree_with_intervals():
    e0, G = 0.01, 2000
    rep = scan_measure(e0, G)
    p = DiophantineParams().with_grid(rep["n_max"], rep["m_max"])
    ivs = resonance_intervals(e0, p)
    eps = np.array([row[0] for row in rep["rows"]])
    inside = np.zeros(G, bool)
    for lo, hi, _, _ in ivs:
        inside |= (eps > lo) & (eps < hi)
    excluded = np.array([not row[1] for row in rep["rows"]])
    # the last point sits on the clipped end of the range
    assert np.array_equal(inside[:-1], excluded[:-1])


def test_fine_grid_converges_to_exact_measure():
    e0 = 0.01
    p = DiophantineParams().with_grid(4000, 4001)
    ivs = resonance_intervals(e0, p)
    merged = scan_measure(e0, 1000)["exact_intervals"]
    exact = sum(h - l for l, h in merged) / e0
    G = 10**6
    eps = e0 * np.arange(1, G + 1) / G
    inside = np.zeros(G, bool)
    for lo, hi, _, _ in ivs:
        inside[np.searchsorted(eps, lo, side="right") : np.searchsorted(eps, hi, side="left")] = True
    assert inside.mean() == pytest.approx(exact, rel=0.01)


def test_scan_fractions_frozen_and_decreasing():
    fr = [scan_measure(e0, 2000)["fraction_excluded"] for e0 in (0.04, 0.02, 0.01, 0.005)]
    assert fr == pytest.approx([0.032, 0.0265, 0.024, 0.0235], abs=1e-12)
    assert all(a > b for a, b in zip(fr, fr[1:]))


def test_scan_with_frequency_provider_is_stricter():
    base = scan_measure(0.01, 1000, DiophantineParams(n_max=16, m_max=16))
    strict = scan_measure(0.01, 1000, DiophantineParams(n_max=16, m_max=16), lambda e: FrequencyTable.unperturbed(16, e))
    assert strict["fraction_excluded"] >= base["fraction_excluded"]


def test_exports():
    rep = scan_measure(0.01, 1000)
    lines = scan_csv(rep).strip().splitlines()
    assert lines[0] == "epsilon,accepted,worst_margin,n,m,m_prime"
    assert len(lines) == 1001
    data = json.loads(intervals_json(rep))
    assert data["n_max"] == rep["n_max"] and len(data["intervals"]) == len(rep["intervals"])


def test_parameter_validation():
    with pytest.raises(DomainError):
        DiophantineParams(C0=0.0)
    with pytest.raises(DomainError):
        DiophantineParams(tau=2.0, tau0=1.2)
    with pytest.raises(DomainError):
        DiophantineParams(tau=2.5, first_melnikov_only=True)
    with pytest.raises(DomainError):
        scan_measure(0.01, 999)
    with pytest.raises(DomainError):
        scan_measure(1.5, 2000)
    with pytest.raises(DomainError):
        omega_margin(-0.1, DiophantineParams())
