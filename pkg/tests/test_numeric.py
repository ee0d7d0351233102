from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from loopreg.hopf import Character, MINUS
from loopreg.numeric import (
    GridSpec,
    KernelSpec,
    Mollifier,
    UnresolvedMollifier,
    UnresolvedScale,
    bphz_character,
    bump,
    c_oracle,
    character_oracle,
    estimate_gminus,
    grid_second_moment,
    kernel_table,
    lift,
    loglog_slope,
    moment_oracle,
    mollifier_table,
    pairing_grid,
    recentered_eval,
    sample_noise,
    second_moment_oracle,
    tree_seed,
)
from loopreg.symbolic import Forest, LinComb, parse_tree

SMALL = KernelSpec(radius=0.25)
EPS = 1 / 8


def T(text: str):
    return parse_tree(text)


@pytest.fixture(scope="module")
def c_small():
    return c_oracle(EPS, SMALL)


# ---------------------------------------------------------------------------
# mollifier and kernel


def test_bump_has_unit_mass_and_support():
    assert quad(bump, -0.5, 0.5)[0] == pytest.approx(1.0, rel=1e-10)
    assert bump(np.array([-0.5, 0.5, 0.7])).tolist() == [0.0, 0.0, 0.0]


@pytest.mark.parametrize("order", [1, 2])
def test_bump_derivatives_match_finite_differences(order):
    s = np.linspace(-0.4, 0.4, 9)
    h = 1e-4
    if order == 1:
        fd = (bump(s + h) - bump(s - h)) / (2 * h)
    else:
        fd = (bump(s + h) - 2 * bump(s) + bump(s - h)) / h**2
    assert np.allclose(bump(s, order), fd, rtol=1e-4, atol=1e-4)


@given(st.floats(0.05, 1.0))
@settings(max_examples=20, deadline=None)
def test_mollifier_unit_mass(eps):
    rho = Mollifier(eps)
    mt = quad(lambda t: rho.factor_t(t), *rho.support_t)[0]
    mx = quad(lambda x: rho.factor_x(x), *rho.support_x)[0]
    assert mt * mx == pytest.approx(1.0, rel=1e-8)


def test_kernel_cutoff_and_causality():
    k = KernelSpec()
    assert k(0.01, 0.1) == pytest.approx(float(np.exp(-0.01 / 0.04) / np.sqrt(0.04 * np.pi)))
    assert k(-0.01, 0.0) == 0.0
    assert k(1.1, 0.0) == 0.0 and k(0.0, 1.05) == 0.0
    assert k.chi(0.1, 0.3) == 1.0  # norm below 1/2
    with pytest.raises(KeyError):
        k.require((2, 0))


def test_rho_second_moment_matches_closed_form():
    b2 = quad(lambda s: bump(s) ** 2, -0.5, 0.5)[0]
    got = second_moment_oracle(None, EPS)
    assert got.value == pytest.approx(EPS**-3 * b2**2, rel=1e-4)


def test_c_oracle_small_kernel(c_small):
    # frozen from a 12-point panel rule; the grid check below is independent
    assert c_small.value == pytest.approx(2.92656, rel=1e-4)
    assert c_small.error < 1e-3


# ---------------------------------------------------------------------------
# point estimator


def test_point_estimates_agree_with_wick_oracle():
    for text in ["Xi(1)", "Xi(1)*Xi(1)", "I'(Xi(1))*I'(Xi(1))"]:
        tau = T(text)
        est = estimate_gminus(tau, EPS, 2000, seed=0, kernel=SMALL)
        orc = moment_oracle(tau, EPS, SMALL)
        assert abs(est.mean - orc.value) < 4 * math.hypot(est.stderr, orc.error), text


def test_distinct_noises_are_uncorrelated():
    for text in ["Xi(1)*Xi(2)", "I'(Xi(1))*I'(Xi(2))"]:
        tau = T(text)
        assert moment_oracle(tau, EPS, SMALL).value == 0.0
        est = estimate_gminus(tau, EPS, 2000, seed=3, kernel=SMALL)
        assert abs(est.mean) < 4 * est.stderr


def test_point_estimator_is_deterministic():
    tau = T("I'(Xi(1))*I'(Xi(1))")
    a = estimate_gminus(tau, EPS, 300, seed=5, kernel=SMALL)
    b = estimate_gminus(tau, EPS, 300, seed=5, kernel=SMALL)
    c = estimate_gminus(tau, EPS, 300, seed=6, kernel=SMALL)
    assert (a.mean, a.stderr) == (b.mean, b.stderr)
    assert a.mean != c.mean


def test_tree_seeds_differ_between_trees():
    assert tree_seed(0, T("Xi(1)")) != tree_seed(0, T("Xi(2)"))
    assert tree_seed(0, T("Xi(1)")) == tree_seed(0, T("Xi(1)"))


def test_bphz_character_matches_oracle(c_small):
    tau = T("I'(Xi(1))*I'(Xi(1))")
    g = bphz_character(EPS, 2000, [tau], seed=1, kernel=SMALL)
    assert character_oracle(tau, EPS, SMALL).value == pytest.approx(-c_small.value)
    assert abs(g.value(tau) + c_small.value) < 4 * g.error(tau)


def test_numeric_character_multiplicative_on_forests():
    a, b = T("Xi(1)*Xi(1)"), T("Xi(1)*Xi(2)")
    g = bphz_character(EPS, 500, [a, b], seed=2, kernel=SMALL)
    assert g(Forest([a, b])) == g.value(a) * g.value(b)


# ---------------------------------------------------------------------------
# grid back end


def test_grid_validates_time_step():
    with pytest.raises(ValueError):
        GridSpec(16, 1e-2, 0.1)


def test_unresolved_mollifier_raises():
    grid = GridSpec(16, (1 / 16) ** 2 / 2, 0.1)
    with pytest.raises(UnresolvedMollifier):
        sample_noise(grid, 1 / 16, seed=0)


def test_noise_is_bit_identical_for_equal_seeds():
    grid = GridSpec.resolving(EPS, 0.05)
    a = sample_noise(grid, EPS, seed=11, m=2)
    b = sample_noise(grid, EPS, seed=11, m=2)
    c = sample_noise(grid, EPS, seed=12, m=2)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert not np.array_equal(a.values[0], a.values[1])


def test_noise_variance_and_gaussian_fourth_moment():
    grid = GridSpec.resolving(EPS, 0.2)
    table, _ = mollifier_table(grid, EPS)
    exact = float(np.sum(table**2) * grid.dt * grid.dx)
    vals = np.concatenate([sample_noise(grid, EPS, seed=4, stream=s).values[0, :, ::8].ravel() for s in range(20)])
    # neighbouring samples are correlated; the tolerance allows for that
    assert np.mean(vals**2) == pytest.approx(exact, rel=0.1)
    assert np.mean(vals**4) / np.mean(vals**2) ** 2 == pytest.approx(3.0, rel=0.15)


def test_lift_is_multiplicative_and_linear():
    grid = GridSpec.resolving(EPS, 0.1)
    noise = sample_noise(grid, EPS, seed=0, m=2)
    xi1, xi2 = lift(T("Xi(1)"), noise, SMALL), lift(T("Xi(2)"), noise, SMALL)
    prod = lift(T("Xi(1)*Xi(2)"), noise, SMALL)
    assert np.array_equal(prod.values, xi1.values * xi2.values)
    ix = lift(T("I'(Xi(1))"), noise, SMALL)
    sq = lift(T("I'(Xi(1))*I'(Xi(1))"), noise, SMALL)
    assert np.array_equal(sq.values, ix.values * ix.values)
    combo = LinComb.basis(T("Xi(1)")) * 2 + LinComb.basis(T("I'(Xi(1))")) * -3
    assert np.allclose(lift(combo, noise, SMALL).values, 2 * xi1.values - 3 * ix.values)


def test_heat_kernel_table_conserves_mass_before_cutoff():
    grid = GridSpec.resolving(EPS, 0.1, length=2.0)
    tab = kernel_table(KernelSpec(), (0, 0), grid.dt, grid.dx, grid.nx)
    # at short times the heat kernel sits well inside the cutoff and has unit spatial mass
    assert tab[1:5].sum(axis=1) / grid.dt == pytest.approx(np.ones(4), rel=1e-6)
    dtab = kernel_table(SMALL, (0, 1), grid.dt, grid.dx, grid.nx)
    assert abs(dtab.sum()) < 1e-12


def test_grid_constant_converges_to_quadrature(c_small):
    errors = []
    for ppe in (4, 8, 16):
        grid = GridSpec.resolving(EPS, SMALL.t_support() + EPS**2, ppe)
        errors.append(abs(grid_second_moment((0, 1), EPS, grid, SMALL) / c_small.value - 1))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 0.01


def test_grid_estimate_needs_polynomial_free_tree():
    grid = GridSpec.resolving(EPS, 0.1)
    with pytest.raises(ValueError):
        estimate_gminus(T("X^(0,1)*Xi(1)"), EPS, 2, grid=grid)


def test_deep_tree_needs_grid():
    with pytest.raises(ValueError):
        estimate_gminus(T("I'(I'(Xi(1))*Xi(1))"), EPS, 2)


def test_grid_estimate_of_linear_tree_is_centred():
    grid = GridSpec.resolving(EPS, SMALL.t_support() + 0.05)
    est = estimate_gminus(T("I'(Xi(1))"), EPS, 20, seed=0, kernel=SMALL, grid=grid)
    assert abs(est.mean) < 4 * est.stderr


# ---------------------------------------------------------------------------
# pairings


def test_pairing_of_noise_scales_like_lambda_minus_three():
    lams = [2.0**-1, 2.0**-2, 2.0**-3]
    moments = [recentered_eval(T("Xi(1)"), lam, 2.0**-6, 400, seed=0).second_moment for lam in lams]
    assert loglog_slope(lams, moments) == pytest.approx(-3.0, abs=0.3)


def test_linear_pairing_shift_from_character():
    tau = T("I'(Xi(1))")
    g = Character(MINUS, {})
    a = recentered_eval(tau, 0.25, EPS, 50, seed=0, kernel=SMALL)
    b = recentered_eval(tau, 0.25, EPS, 50, seed=0, g=g, kernel=SMALL)
    assert np.array_equal(a.values, b.values)


def test_pairing_below_resolution_raises():
    grid = GridSpec.resolving(EPS, 0.1)
    with pytest.raises(UnresolvedScale):
        pairing_grid(T("I'(Xi(1))*I'(Xi(1))"), grid.dx, EPS, 1, 0, grid, SMALL)
