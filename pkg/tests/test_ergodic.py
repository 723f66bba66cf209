import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from fellerlab.core import ChainState, DomainError, Interval, RngStream, Spectral, TestFunction, Unit, cesaro_sample
from fellerlab.decomposition import total_variation
from fellerlab.ergodic import (
    NotInvariant,
    StationarySpec,
    birkhoff_average,
    cesaro_convergence,
    chain_cesaro,
    heat_stationary_law,
    invariant_residual,
    mixing_time,
    recurrent_states,
    stationary_law,
    stationary_vector,
    support_inclusion,
)
from fellerlab.models import FiniteChainModel, HeatModel, random_positive_chain
from fellerlab.observables import coordinate, mode_coefficient, sin_coordinate

from .conftest import random_stochastic


def _eig_stationary(P):
    # independent oracle: left eigenvector for eigenvalue 1
    w, v = np.linalg.eig(P.T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1))])
    return vec / vec.sum()


# -- invariant measures -------------------------------------------------------------------


def test_invariant_residual_examples(swap):
    gen = np.random.default_rng(0)
    perms = [np.eye(5)[gen.permutation(5)] for _ in range(4)]
    w = gen.dirichlet(np.ones(4))
    ds = FiniteChainModel(sum(a * p for a, p in zip(w, perms)))
    assert invariant_residual(ds, np.full(5, 0.2)) <= 1e-15
    assert invariant_residual(swap, [1.0, 0.0]) == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_stationary_vector_certified(seed):
    gen = np.random.default_rng(seed)
    chain = FiniteChainModel(random_stochastic(gen.integers(2, 9), gen))
    v = stationary_vector(chain)
    assert invariant_residual(chain, v) <= 1e-12
    np.testing.assert_allclose(v, _eig_stationary(chain.P), atol=1e-10)


def test_stationary_vector_periodic_chain(swap):
    np.testing.assert_allclose(stationary_vector(swap), [0.5, 0.5], atol=1e-15)


def test_heat_stationary_variance():
    law = heat_stationary_law(HeatModel(8))
    assert law.variances[0] == pytest.approx(0.5)
    assert law.full_support


def test_heat_degenerate_mode():
    model = HeatModel(4, noise=lambda k: np.where(np.abs(k) == 2, 0.0, 1.0 / np.abs(k)))
    law = heat_stationary_law(model)
    assert law.variances[1] == 0.0 and not law.full_support
    x = Spectral.from_modes({2: 1.0}, 4)
    out = model.advance(model.encode([x] * 5), 3.0, np.random.default_rng(0))
    np.testing.assert_allclose(out[:, 1], math.exp(-12.0))


def test_heat_stationarity_preserved():
    model = HeatModel(16)
    law = heat_stationary_law(model)
    gen = RngStream(2).generator()
    n = 10_000
    start = law.sample(n, gen)
    out = model.advance(start, 0.7, gen)
    for j in (0, 1, 5, 16, 20):
        col, var = out[:, j], law.variances[j]
        assert abs(col.mean()) <= 4 * math.sqrt(var / n)
        assert abs(col.var(ddof=1) - var) <= 4 * var * math.sqrt(2 / (n - 1))


def test_stationary_law_dispatch(slide, rotation, swap):
    assert stationary_law(slide).kind == "point"
    assert stationary_law(rotation).kind == "uniform"
    assert stationary_law(swap).kind == "vector"
    assert StationarySpec("uniform").quantiles(4).tolist() == [-0.875, -0.625, -0.375, -0.125]


# -- Cesaro averages ----------------------------------------------------------------------


@pytest.mark.parametrize("t", [1.0, 5.0])
def test_heat_cesaro_variance(t):
    model = HeatModel(8)
    oracle, _ = quad(lambda s: -math.expm1(-2 * s) / 2, 0, t)
    oracle /= t
    assert oracle == pytest.approx(0.5 - (1 - math.exp(-2 * t)) / (4 * t), rel=1e-12)
    n = 20_000
    cloud = cesaro_sample(model, Spectral.zero(8), t, n, RngStream(1))
    col = cloud.points[:, 0]
    # the mixture has mean 0; second moment estimate and its standard error
    sq = col**2
    assert abs(sq.mean() - oracle) <= 4 * sq.std(ddof=1) / math.sqrt(n)


@pytest.mark.parametrize("t", [0.5, 2.0, 10.0])
def test_slide_cesaro_w1(slide, t):
    x, n = 0.3, 20_000
    curve = cesaro_convergence(slide, Unit(x), stationary_law(slide), [t], n, RngStream(3))
    # direct quadrature of (1/t) int_0^t (x - s)_+ ds
    oracle = quad(lambda s: max(x - s, 0.0), 0, t, points=[x])[0] / t
    assert oracle == pytest.approx(x * x / (2 * t), rel=1e-10)
    # each sample is (x - s)_+ with s uniform; its standard deviation is at most x
    assert abs(curve[0][1] - oracle) <= 4 * x / math.sqrt(n)


def test_chain_cesaro_exact_tv(swap):
    (t, tv), = cesaro_convergence(swap, ChainState(0), stationary_law(swap), [4], 1, RngStream(0))
    assert tv == 0.0
    (t, tv), = cesaro_convergence(swap, ChainState(0), stationary_law(swap), [3], 1, RngStream(0))
    assert tv == pytest.approx(1 / 6)


def test_heat_cesaro_divergence_decreases():
    model = HeatModel(16)
    ref = stationary_law(model)
    curve = cesaro_convergence(model, Spectral.from_modes({1: 3.0}, 16), ref, [1.0, 50.0], 4000, RngStream(4))
    assert curve[1][1] < curve[0][1]


def test_rotation_cesaro_divergence_small(rotation):
    curve = cesaro_convergence(rotation, Interval(-0.3), stationary_law(rotation), [10_000], 5000,
                               RngStream(5))
    assert curve[0][1] < 0.05


def test_chain_cesaro_rejects_zero_horizon(swap):
    with pytest.raises(DomainError):
        chain_cesaro(swap, [1.0, 0.0], 0)


@settings(max_examples=100)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.floats(0, 1), st.integers(1, 40))
def test_cesaro_linearity(n, seed, a, t):
    gen = np.random.default_rng(seed)
    chain = FiniteChainModel(random_stochastic(n, gen, positive=False))
    nu1, nu2 = gen.dirichlet(np.ones(n)), gen.dirichlet(np.ones(n))
    lhs = chain_cesaro(chain, a * nu1 + (1 - a) * nu2, t)
    rhs = a * chain_cesaro(chain, nu1, t) + (1 - a) * chain_cesaro(chain, nu2, t)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-14)


# -- Birkhoff averages --------------------------------------------------------------------


def test_birkhoff_rotation(rotation):
    avg = birkhoff_average(rotation, coordinate(), Interval(-0.3), 100_000, RngStream(0))
    assert abs(avg + 0.5) <= 0.01


@pytest.mark.parametrize("x", [0.2, 0.9])
def test_birkhoff_slide(slide, x):
    f = sin_coordinate(3.0)
    for t in (1.0, 10.0, 100.0):
        avg = birkhoff_average(slide, f, Unit(x), t, RngStream(0))
        assert abs(avg - f(slide, Unit(0.0))) <= x * 2 * f.sup_bound / t


def test_birkhoff_swap_even(swap):
    f = TestFunction.from_vector([0.0, 1.0])
    for t in (2, 10, 1000):
        assert birkhoff_average(swap, f, ChainState(0), t, RngStream(0)) == 0.5


def test_birkhoff_heat_runs():
    model = HeatModel(8)
    avg = birkhoff_average(model, mode_coefficient(model, 1), Spectral.zero(8), 400, RngStream(1))
    assert abs(avg) < 0.2


def test_birkhoff_rejects_short_horizon(swap):
    with pytest.raises(DomainError):
        birkhoff_average(swap, TestFunction.from_vector([0.0, 1.0]), ChainState(0), 0, RngStream(0))


def test_birkhoff_matches_cesaro_on_chains():
    hits, trials, t = 0, 100, 2000
    for seed in range(trials):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(2, 7))
        chain = random_positive_chain(n, gen)
        vec = gen.random(n)
        f = TestFunction.from_vector(vec)
        x = int(gen.integers(n))
        delta = np.eye(n)[x]
        exact = float(chain_cesaro(chain, delta, t) @ vec)
        mu = stationary_vector(chain)
        var = float(mu @ vec**2 - (mu @ vec) ** 2)
        avg = birkhoff_average(chain, f, ChainState(x), t, RngStream(seed))
        hits += abs(avg - exact) <= 5 * math.sqrt(var / t)
    assert hits >= 95


# -- support inclusion --------------------------------------------------------------------


TRANSIENT = FiniteChainModel([[0.5, 0.5, 0.0], [0.3, 0.7, 0.0], [0.2, 0.3, 0.5]])


def test_recurrent_states(swap):
    assert recurrent_states(TRANSIENT).tolist() == [True, True, False]
    assert recurrent_states(swap).all()
    two_sinks = FiniteChainModel([[1, 0, 0], [0.5, 0, 0.5], [0, 0, 1]])
    assert recurrent_states(two_sinks).tolist() == [True, False, True]


def test_support_inclusion_transient_chain():
    mu = stationary_vector(TRANSIENT)
    assert mu[2] <= 1e-12
    assert support_inclusion(TRANSIENT, [1.0, 0.0, 0.0], mu).holds


def test_support_inclusion_rejects_outside_start():
    mu = stationary_vector(TRANSIENT)
    with pytest.raises(DomainError):
        support_inclusion(TRANSIENT, [0.0, 0.0, 1.0], mu)


def test_support_inclusion_identity():
    chain = FiniteChainModel(np.eye(4))
    assert support_inclusion(chain, [0.1, 0.2, 0.3, 0.4], np.full(4, 0.25)).holds


def test_support_inclusion_rejects_non_invariant(swap):
    with pytest.raises(NotInvariant):
        support_inclusion(swap, [1.0, 0.0], [1.0, 0.0])


def _random_reducible_chain(gen):
    n = int(gen.integers(2, 9))
    P = gen.random((n, n)) * (gen.random((n, n)) < 0.5)
    closed = gen.choice(n, size=int(gen.integers(1, n + 1)), replace=False)
    inside = np.zeros(n, dtype=bool)
    inside[closed] = True
    P[np.ix_(inside, ~inside)] = 0.0
    P[np.arange(n), np.arange(n)] += 0.05
    P /= P.sum(axis=1, keepdims=True)
    return FiniteChainModel(P)


def test_support_inclusion_sweep():
    violations = 0
    for seed in range(100):
        gen = np.random.default_rng(seed)
        chain = _random_reducible_chain(gen)
        mu = stationary_vector(chain, start=gen.dirichlet(np.ones(chain.n)))
        support = np.flatnonzero(mu > 1e-12)
        nu = np.zeros(chain.n)
        nu[support] = gen.dirichlet(np.ones(support.size))
        violations += not support_inclusion(chain, nu, mu, t_max=1000).holds
    assert violations == 0


def test_mixing_time():
    chain = FiniteChainModel([[0.5, 0.5], [0.5, 0.5]])
    assert mixing_time(chain, 0, [0.5, 0.5]) == 1
    gen = np.random.default_rng(3)
    c = random_positive_chain(5, gen)
    mu = stationary_vector(c)
    t = mixing_time(c, 0, mu, 0.01)
    assert total_variation(np.eye(5)[0] @ c.power(t), mu) <= 0.01
