"""Hypothesis properties for the invariants of each module."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.integrate import quad

from resonant_wave import elliptic as El
from resonant_wave.diophantine import DiophantineParams, check_melnikov, check_omega
from resonant_wave.frequencies import FrequencyTable
from resonant_wave.lindstedt import ExpansionConfig, equation_defects, evaluate_and_residual, expand, physical_solution
from resonant_wave.qsolver import L_equation_residual, apply_L, build_ground_state, odd_singular_gap
from resonant_wave.series import FourierSeries1D, FourierSeries2D, multiply
from resonant_wave.solver import NewtonConfig, solve_full

FAST = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
MEDIUM = settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])

finite = st.floats(min_value=-10, max_value=10, allow_nan=False)


def odd_series(N):
    return st.lists(finite, min_size=N, max_size=N).map(
        lambda b: FourierSeries1D.from_dict(N, {n: -0.5j * v for n, v in enumerate(b, 1)} | {-n: 0.5j * v for n, v in enumerate(b, 1)}, "odd")
    )


def real_series(N):
    return st.lists(finite, min_size=2 * N + 1, max_size=2 * N + 1).map(
        lambda v: FourierSeries1D(N, np.fft.fft(np.asarray(v))[np.arange(-N, N + 1) % (2 * N + 1)] / (2 * N + 1), "none")
    )


def raw_table(N):
    return st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=(2 * N + 1) ** 2, max_size=(2 * N + 1) ** 2).map(
        lambda v: np.array(v).reshape(2 * N + 1, 2 * N + 1)
    )


def exact_symmetry(c):
    return np.array_equal(c, -c[:, ::-1]) and np.array_equal(c, c[::-1, :]) and np.all(c.real == 0)


# -- elliptic --------------------------------------------------------------------

def _K_quad(m):
    return quad(lambda t: 1 / math.sqrt(1 - m * math.sin(t) ** 2), 0, math.pi / 2, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def _E_quad(m):
    return quad(lambda t: math.sqrt(1 - m * math.sin(t) ** 2), 0, math.pi / 2, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-0.999, max_value=0.99))
def test_complete_integrals_match_quadrature(m):
    assert El.complete_elliptic_K(m) == pytest.approx(_K_quad(m), abs=1e-10)
    assert El.complete_elliptic_E(m) == pytest.approx(_E_quad(m), abs=1e-10)


@FAST
@given(st.floats(min_value=-20, max_value=20), st.floats(min_value=-0.99, max_value=0.99))
def test_jacobi_identities(u, m):
    sn, cn, dn = El.jacobi_sn_cn_dn(u, m)
    assert sn * sn + cn * cn == pytest.approx(1.0, abs=1e-12)
    assert dn * dn + m * sn * sn == pytest.approx(1.0, abs=1e-12)
    sn2, cn2, dn2 = El.jacobi_sn_cn_dn(-u, m)
    assert sn2 == pytest.approx(-sn, abs=1e-12)
    assert cn2 == pytest.approx(cn, abs=1e-12) and dn2 == pytest.approx(dn, abs=1e-12)


def test_modulus_is_deterministic():
    assert repr(El.solve_modulus()) == repr(El.solve_modulus())


# -- 1D series --------------------------------------------------------------------

@FAST
@given(odd_series(6), odd_series(6))
def test_1d_products_keep_parity_and_reality(f, g):
    for h in (multiply(f, g), multiply(multiply(f, g), f), f + g, f - g, f * 2.5, f.derivative()):
        c = h.coeffs
        assert np.array_equal(c[::-1], np.conj(c))
        expected = {"odd": -1, "even": 1}.get(h.parity)
        if expected is not None:
            assert np.array_equal(c[::-1], expected * c)
    assert multiply(f, g).parity == "even" and multiply(multiply(f, g), f).parity == "odd"


@FAST
@given(real_series(4), real_series(4), real_series(4))
def test_convolution_commutes_and_associates(f, g, h):
    N = 12
    fg = multiply(f, g, N)
    assert np.allclose(fg.coeffs, multiply(g, f, N).coeffs, rtol=0, atol=1e-12 * (1 + np.max(np.abs(fg.coeffs))))
    left = multiply(multiply(f, g, N), h, N).coeffs
    right = multiply(f, multiply(g, h, N), N).coeffs
    assert np.max(np.abs(left - right)) <= 1e-12 * (1 + np.max(np.abs(left)))


@FAST
@given(real_series(5))
def test_parseval(f):
    M = 64
    vals = f.sample(M)
    lhs = np.mean(np.abs(vals) ** 2)
    rhs = np.sum(np.abs(f.coeffs) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


# -- 2D series --------------------------------------------------------------------

@FAST
@given(raw_table(3))
def test_2d_construction_symmetrizes_exactly(raw):
    u = FourierSeries2D(3, raw)
    assert exact_symmetry(u.coeffs)
    assert u.symmetry_defect() == 0.0
    v = u + u * 0.5
    assert exact_symmetry(v.coeffs) and exact_symmetry((u - v).coeffs)
    assert exact_symmetry(FourierSeries2D.from_json(u.to_json()).coeffs)


@FAST
@given(st.dictionaries(st.tuples(st.integers(0, 4), st.integers(1, 4)), finite, max_size=10))
def test_2d_from_independent_entries(entries):
    u = FourierSeries2D.from_independent(4, {k: 1j * v for k, v in entries.items()})
    assert exact_symmetry(u.coeffs)
    for (n, m), v in entries.items():
        assert u.coeff(n, m) == pytest.approx(1j * v)


@settings(max_examples=1000, deadline=None)
@given(st.floats(min_value=0, max_value=0.05), st.integers(2, 6), st.integers(1, 3), st.floats(min_value=-1, max_value=1))
def test_expansion_layers_keep_symmetry(ground16, eps, N, K, phi2):
    state = expand(ExpansionConfig(K=K, N=N, epsilon=eps, phi=(1.0, phi2)), ground=ground16)
    for layer in state.orders:
        assert exact_symmetry(layer.coeffs)
    u, _ = evaluate_and_residual(state, 1.0)
    assert exact_symmetry(u.coeffs)
    for A in state.A:
        assert np.array_equal(A.coeffs[::-1], -A.coeffs) and np.all(A.coeffs.real == 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1e-4, max_value=0.02), st.integers(3, 8))
def test_newton_solution_keeps_symmetry(ground16, eps, N):
    sol = solve_full(NewtonConfig(N=N, epsilon=eps), ground16)
    for table in (sol["u"], sol["w"]):
        assert exact_symmetry(table.coeffs)
    assert np.all(sol["a"].coeffs.real == 0)


# -- operator L ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def ground32():
    return build_ground_state(32)


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(finite, min_size=8, max_size=8))
def test_L_solves_its_equation_and_is_cutoff_stable(ground, ground32, b):
    h = FourierSeries1D.from_dict(32, {n: -0.5j * v for n, v in enumerate(b, 1)} | {-n: 0.5j * v for n, v in enumerate(b, 1)}, "odd")
    y = apply_L(ground, h.resized(64))
    assert L_equation_residual(ground, h.resized(64), y) <= 1e-8 * (1 + max(abs(v) for v in b))
    y32 = apply_L(ground32, h)
    low = slice(32 - 8, 32 + 9)
    assert np.max(np.abs(y.resized(32).coeffs[low] - y32.coeffs[low])) <= 1e-10 * (1 + np.max(np.abs(y.coeffs)))


def test_homogeneous_odd_solutions_absent(ground):
    assert odd_singular_gap(ground) > 1e-6


# -- j-frame --------------------------------------------------------------------------

@pytest.mark.parametrize("K", [1, 2])
def test_harmonic_index_two_solves_the_original_equation(ground16, K):
    eps, N = 2e-3, 6
    phi = (1.0, 0.5)
    state = expand(ExpansionConfig(K=K, N=N, epsilon=eps, j=2, phi=phi), ground=ground16)
    U, _ = evaluate_and_residual(state, 1.0)
    qU, pU = equation_defects(U, state.config)
    u = physical_solution(state, 1.0)
    qu, pu = equation_defects(u, ExpansionConfig(K=K, N=2 * N, epsilon=eps, phi=phi))
    idx = 2 * N + 2 * np.arange(-N, N + 1)
    assert np.max(np.abs(qu[idx] - 8 * qU)) <= 1e-13
    assert np.max(np.abs(pu[np.ix_(idx, idx)] - 8 * pU)) <= 1e-13
    off = np.ones(4 * N + 1, bool)
    off[idx] = False
    # off the embedded lattice only product round-off remains
    assert max(np.max(np.abs(qu[off])), np.max(np.abs(pu[off, :])), np.max(np.abs(pu[:, off]))) <= 1e-15


# -- small scales (only huge modes reach scales >= 0) --------------------------------

@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=1e-3, max_value=5e-3), st.floats(min_value=-1, max_value=1))
def test_nonnegative_scales_need_large_modes(eps, shift):
    from resonant_wave.trees import chi_partition

    C0 = 0.01
    freqs = FrequencyTable.from_nu(shift * eps * np.ones(16), eps)
    bound = int(4 / eps)
    n = np.arange(1, bound + 1)
    w = freqs.value(n)
    x = np.abs(math.sqrt(1 - eps) * n)[:, None] - w[None, :]
    # chi_{-1} = 1 means the line sits entirely on scale -1
    low = np.asarray(chi_partition(x, -1, C0)) < 1.0
    low &= n[:, None] != n[None, :]
    nn, mm = np.nonzero(low)
    if nn.size:
        assert np.min(np.minimum(n[nn], n[mm])) >= 1 / (2 * eps)


# -- Diophantine checks -------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=1e-4, max_value=0.2), st.floats(min_value=1e-3, max_value=0.2), st.floats(min_value=1.0, max_value=3.0))
def test_raising_C0_never_admits(eps, C0, factor):
    lo = DiophantineParams(C0=C0, n_max=40, m_max=40)
    hi = DiophantineParams(C0=min(0.5, C0 * factor), n_max=40, m_max=40)
    if not check_omega(eps, lo):
        assert not check_omega(eps, hi)
    freqs = FrequencyTable.unperturbed(40, eps)
    if not check_melnikov(freqs, eps, lo)["first"]:
        assert not check_melnikov(freqs, eps, hi)["first"]


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=1e-4, max_value=0.1), st.integers(2, 10))
def test_accepted_epsilon_has_no_small_divisor(ground16, eps, N):
    if check_omega(eps, DiophantineParams(n_max=N, m_max=N)):
        expand(ExpansionConfig(K=1, N=N, epsilon=eps), ground=ground16)


# -- frequency tables ------------------------------------------------------------------

@FAST
@given(st.lists(st.floats(min_value=-0.1, max_value=0.1), min_size=1, max_size=12), st.integers(-30, 30))
def test_frequencies_even_in_mode(nu, m):
    t = FrequencyTable.from_nu(nu)
    assert t.value(m) == t.value(-m)
    assert FrequencyTable.from_nu(nu).omega_t.tobytes() == t.omega_t.tobytes()
