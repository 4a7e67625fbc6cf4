import math

import numpy as np
import pytest

from resonant_wave.errors import BudgetError, DomainError, PreconditionError
from resonant_wave.lindstedt import (
    ExpansionConfig,
    equation_defects,
    evaluate_and_residual,
    expand,
    f_k,
    growth_diagnostic,
    initial_state,
    w_k,
)
from resonant_wave.series import FourierSeries2D
from resonant_wave.trees import ShapeEvaluator, TreeContext, lemma2_relative_error


def cfg(K=1, N=6, eps=1e-2, **kw):
    return ExpansionConfig(K=K, N=N, epsilon=eps, **kw)


def loop_cube(u, N):
    """[u^3]_{n,m} for |n|, |m| <= N by explicit summation over the support of u."""
    support = [(n, m, u[n + N, m + N]) for n in range(-N, N + 1) for m in range(-N, N + 1) if u[n + N, m + N] != 0]
    out = np.zeros_like(u)
    for n1, m1, c1 in support:
        for n2, m2, c2 in support:
            for n3, m3, c3 in support:
                n, m = n1 + n2 + n3, m1 + m2 + m3
                if abs(n) <= N and abs(m) <= N:
                    out[n + N, m + N] += c1 * c2 * c3
    return out


def test_w1_is_the_cubic_convolution_of_the_ground_layer(ground16):
    c = cfg()
    state = initial_state(c, ground=ground16)
    N = c.N
    u0 = state.orders[0].coeffs
    n = np.arange(-N, N + 1)
    off = (np.abs(n)[:, None] != np.abs(n)[None, :]) & (n[None, :] != 0)
    den = -c.omega ** 2 * n[:, None] ** 2 + n[None, :] ** 2
    expected = np.zeros_like(u0)
    expected[off] = c.epsilon * loop_cube(u0, N)[off] / den[off]
    assert np.max(np.abs(w_k(state, 1).coeffs - expected)) <= 1e-15


def test_f1_uses_only_off_diagonal_first_order_factor(ground16):
    c = cfg()
    state = initial_state(c, ground=ground16)
    N = c.N
    w1 = w_k(state, 1)
    state.orders.append(w1)
    u0 = state.orders[0].coeffs
    # f_1 is the diagonal of the linear part of the cube in the direction of w1; the cube is polynomial, so the symmetric quotient is exact up to O(t^2 |w1|^3)
    t = 1e-3
    lin = (loop_cube(u0 + t * w1.coeffs, N) - loop_cube(u0 - t * w1.coeffs, N)) / (2 * t)
    idx = np.arange(2 * N + 1)
    got = f_k(state, 1).coeffs
    assert np.max(np.abs(got + lin[idx, idx])) <= 1e-12


def test_f_zero_when_lower_orders_vanish(ground16):
    state = initial_state(cfg(), ground=ground16)
    state.orders[0] = FourierSeries2D.zeros(state.N)
    state.orders.append(w_k(state, 1))
    assert np.all(f_k(state, 1).coeffs == 0)


def test_cubic_only_equals_general_path(ground16):
    a = expand(cfg(K=3, phi=(1.0,)), ground=ground16)
    b = expand(cfg(K=3, phi=(1.0, 0.0)), ground=ground16)
    for k in range(4):
        assert np.max(np.abs(a.orders[k].coeffs - b.orders[k].coeffs)) <= 1e-16


def test_zero_epsilon_has_no_off_diagonal_layers(ground16):
    state = expand(cfg(K=3, eps=0.0), ground=ground16)
    for k in range(1, 4):
        assert np.max(np.abs(w_k(state, k).coeffs)) == 0.0


def test_symmetry_of_raw_products(ground16):
    state = expand(cfg(K=3), ground=ground16)
    for k in range(4):
        P = state.power(3, k)
        assert np.max(np.abs(P + P[:, ::-1])) <= 1e-15
        assert np.max(np.abs(P - P[::-1, :])) <= 1e-15
        assert np.max(np.abs(P.real)) <= 1e-15


def test_order_one_matches_tree_sum(ground16):
    state = expand(cfg(K=1, N=16, eps=1e-3), ground=ground16)
    assert lemma2_relative_error(state, 1) <= 1e-12


def test_C1_from_diagonal_trees(ground16):
    state = expand(cfg(K=2, N=16, eps=1e-3), ground=ground16)
    ev = ShapeEvaluator(TreeContext.from_state(state))
    assert ev.tree_C(1) == pytest.approx(state.C[1], rel=1e-12)
    assert ev.tree_C(2) == pytest.approx(state.C[2], rel=1e-12)


def test_diagonal_layers_odd(ground16):
    state = expand(cfg(K=4, N=12, eps=1e-2), ground=ground16)
    for A in state.A:
        assert A.parity == "odd"
        assert np.max(np.abs(A.coeffs + A.coeffs[::-1])) == 0.0


@pytest.mark.parametrize("eps", [1e-3, 3e-3, 1e-2])
def test_each_order_gains_a_factor_epsilon(ground16, eps):
    res = [evaluate_and_residual(expand(cfg(K=K, N=16, eps=eps), ground=ground16), 1.0)[1] for K in (1, 2, 3)]
    for lo, hi in zip(res, res[1:]):
        assert 0.05 * eps <= hi / lo <= 1.0 * eps


def test_mu_zero_gives_ground_layer(ground16):
    state = expand(cfg(K=2, N=16, eps=1e-3), ground=ground16)
    u, res = evaluate_and_residual(state, 0.0)
    assert np.array_equal(u.coeffs, state.orders[0].coeffs)
    q, p = equation_defects(state.orders[0], state.config, mu=0.0)
    assert res == pytest.approx(max(np.max(np.abs(q)), np.max(np.abs(p))), abs=0)
    assert res <= 1e-10


def test_newton_solution_beats_truncations(ground16):
    from resonant_wave.solver import NewtonConfig, solve_full

    eps = 1e-3
    sol = solve_full(NewtonConfig(N=16, epsilon=eps), ground16)
    c = cfg(K=1, N=16, eps=eps)
    q, p = equation_defects(sol["u"], c)
    newton = max(np.max(np.abs(q)), np.max(np.abs(p)))
    assert newton <= 1e-10
    for K in (1, 2):
        assert newton < evaluate_and_residual(expand(cfg(K=K, N=16, eps=eps), ground=ground16), 1.0)[1]


def test_growth_diagnostic_runs_and_ratios(ground16):
    d = growth_diagnostic(cfg(K=6, N=16, eps=1e-3), ground=ground16)
    assert d["failed"] is None
    rows = d["rows"]
    assert len(rows) == 7 and all(math.isfinite(r[1]) for r in rows)
    for (_, prev, _), (_, mag, ratio) in zip(rows, rows[1:]):
        assert ratio == pytest.approx(mag / prev, rel=1e-15)


def test_growth_with_counterterms_bounded(ground16, nu_run):
    table, _ = nu_run
    nu_a, nu_b = table.rows(-1)
    d = growth_diagnostic(cfg(K=6, N=16, eps=1e-3), ground=ground16, nu=nu_a, nu_b=nu_b)
    assert d["failed"] is None
    assert max(r[2] for r in d["rows"][1:]) <= 1e-2


def test_config_validation():
    with pytest.raises(DomainError):
        cfg(K=0)
    with pytest.raises(DomainError):
        cfg(phi=(0.0,))
    with pytest.raises(BudgetError):
        ExpansionConfig(K=10, N=400, epsilon=1e-3)


def test_order_must_be_next(ground16):
    from resonant_wave.lindstedt import advance_order

    state = initial_state(cfg(K=3), ground=ground16)
    with pytest.raises(PreconditionError):
        advance_order(state, 2)


def test_negative_cubic_coefficient(ground16):
    state = expand(cfg(K=2, N=12, eps=1e-2, phi=(-1.0,)), ground=ground16)
    assert state.config.omega == pytest.approx(math.sqrt(1.01))
    assert evaluate_and_residual(state, 1.0)[1] <= 1e-7
