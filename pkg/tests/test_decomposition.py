import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fellerlab.core import DomainError
from fellerlab.decomposition import (
    InsufficientMass,
    NoEntryTime,
    build_decomposition,
    find_entry_time,
    largest_alpha,
    split_measure,
    stages_for_tolerance,
    total_variation,
    verify_telescoping,
)
from fellerlab.models import FiniteChainModel

from .conftest import random_stochastic


def test_entry_time_swap(swap):
    assert find_entry_time(swap, [0.0, 1.0], {0}, 0.5) == 1


def test_entry_time_identity_never():
    with pytest.raises(NoEntryTime):
        find_entry_time(FiniteChainModel(np.eye(2)), [0.0, 1.0], {0}, 0.5, t_max=50)


def test_entry_time_is_strict():
    # mass in B is exactly 0.5 at every step: never strictly above alpha = 0.5
    avg = FiniteChainModel([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(NoEntryTime):
        find_entry_time(avg, [1.0, 0.0], {0}, 0.5, t_max=5)
    assert find_entry_time(avg, [1.0, 0.0], {0}, 0.49) == 1


def test_split_example_against_rational_oracle():
    theta = [Fraction(1, 4)] * 4
    alpha = Fraction(2, 5)
    mass = theta[0] + theta[1]
    nu_q = [theta[0] / mass, theta[1] / mass, 0, 0]
    mu_q = [(th - alpha * n) / (1 - alpha) for th, n in zip(theta, nu_q)]
    assert mu_q == [Fraction(1, 12), Fraction(1, 12), Fraction(5, 12), Fraction(5, 12)]
    nu, mu = split_measure(np.full(4, 0.25), {0, 1}, 0.4)
    np.testing.assert_allclose(nu, [float(v) for v in nu_q], atol=1e-15)
    np.testing.assert_allclose(mu, [float(v) for v in mu_q], atol=1e-15)


def test_split_full_mass_is_fixed_point():
    theta = np.array([0.2, 0.8, 0.0])
    nu, mu = split_measure(theta, {0, 1}, 0.3)
    np.testing.assert_allclose(nu, theta, atol=1e-15)
    np.testing.assert_allclose(mu, theta, atol=1e-15)


def test_split_boundary_rejected():
    with pytest.raises(InsufficientMass):
        split_measure([0.5, 0.5], {0}, 0.5)


def test_split_rejects_bad_inputs():
    with pytest.raises(DomainError):
        split_measure([0.5, 0.5], {0}, 1.0)
    with pytest.raises(DomainError):
        split_measure([0.5, 0.5], {5}, 0.2)
    with pytest.raises(DomainError):
        split_measure([0.5, 0.5], set(), 0.2)


@settings(max_examples=200)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_split_mass_identity(n, seed, alpha):
    gen = np.random.default_rng(seed)
    theta = gen.dirichlet(np.ones(n))
    B = set(gen.choice(n, size=gen.integers(1, n + 1), replace=False).tolist())
    mass = math.fsum(theta[sorted(B)])
    if not mass > alpha:
        with pytest.raises(InsufficientMass):
            split_measure(theta, B, alpha)
        return
    nu, mu = split_measure(theta, B, alpha)
    np.testing.assert_allclose(alpha * nu + (1 - alpha) * mu, theta, atol=1e-14)
    outside = np.ones(n, dtype=bool)
    outside[sorted(B)] = False
    assert np.all(nu[outside] == 0)
    for v in (nu, mu):
        assert np.all(v >= 0) and abs(math.fsum(v) - 1) <= 1e-12


def test_build_swap_example(swap):
    trace = build_decomposition(swap, 1, {0}, 0.5, 1)
    assert trace.s == [1]
    np.testing.assert_array_equal(trace.nus[0], [1.0, 0.0])
    np.testing.assert_array_equal(trace.mus[0], [1.0, 0.0])
    assert verify_telescoping(swap, trace) <= 1e-14


def test_build_positive_three_state_chain():
    gen = np.random.default_rng(4)
    chain = FiniteChainModel(random_stochastic(3, gen))
    trace = build_decomposition(chain, 2, {0}, 0.2, 3)
    assert trace.k == 3
    for nu, mu in zip(trace.nus, trace.mus):
        assert np.all(nu[1:] == 0)
        for v in (nu, mu):
            assert np.all(v >= 0) and abs(math.fsum(v) - 1) <= 1e-12


def test_build_identity_fails_at_stage_one():
    with pytest.raises(NoEntryTime) as info:
        build_decomposition(FiniteChainModel(np.eye(3)), 2, {0}, 0.3, 2, t_max=20)
    assert info.value.stage == 1


@pytest.mark.parametrize("seed", range(5))
def test_single_stage_residual(seed):
    gen = np.random.default_rng(seed)
    chain = FiniteChainModel(random_stochastic(6, gen))
    trace = build_decomposition(chain, 0, {1, 2}, 0.2, 1)
    assert verify_telescoping(chain, trace) <= 1e-14


def test_five_state_five_stage_residual():
    gen = np.random.default_rng(12)
    chain = FiniteChainModel(random_stochastic(5, gen))
    trace = build_decomposition(chain, 4, {0, 1}, 0.3, 5)
    assert verify_telescoping(chain, trace) <= 1e-10
    assert trace.residual_tv == verify_telescoping(chain, trace)


def test_residual_on_larger_chains():
    gen = np.random.default_rng(99)
    for n in (16, 32):
        chain = FiniteChainModel(random_stochastic(n, gen))
        trace = build_decomposition(chain, n - 1, set(range(n // 2)), 0.3, 10)
        assert verify_telescoping(chain, trace) <= 1e-10


def test_trace_serialises():
    gen = np.random.default_rng(0)
    chain = FiniteChainModel(random_stochastic(4, gen))
    trace = build_decomposition(chain, 0, {1}, 0.1, 2)
    d = trace.to_dict()
    assert d["s"] == trace.s and len(d["nus"]) == 2 and d["B"] == [1]


@settings(max_examples=300)
@given(st.floats(0.01, 0.99), st.floats(1e-9, 10), st.floats(1e-6, 100))
def test_stages_for_tolerance_matches_brute_force(alpha, eps, sup_f):
    k = stages_for_tolerance(alpha, eps, sup_f)
    brute = 1
    while not 2 * (1 - alpha) ** brute * sup_f < eps:
        brute += 1
    assert k == brute


def test_stages_for_tolerance_exact_power():
    # log ratio is an integer here; the strict inequality needs one more stage
    assert stages_for_tolerance(0.5, 2 * 0.5**3, 1.0) == 4


def test_largest_alpha_swap(swap):
    a = largest_alpha(swap, 1, {0}, t_max=10)
    assert 1 - 1e-11 < a < 1


def test_largest_alpha_matches_mass_curve():
    gen = np.random.default_rng(5)
    chain = FiniteChainModel(random_stochastic(4, gen))
    v, best = np.eye(4)[3], 0.0
    for _ in range(50):
        v = v @ chain.P
        best = max(best, v[0])
    a = largest_alpha(chain, 3, {0}, t_max=50)
    assert best - 1e-11 <= a < best
    assert find_entry_time(chain, np.eye(4)[3], {0}, a, 50) >= 1


def test_total_variation_examples():
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0
