"""Invariant measures, Cesaro averages, Birkhoff averages and support checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.stats import norm as normal

from .core import (
    DomainError,
    MetricPoint,
    RngStream,
    SemigroupModel,
    TestFunction,
    TimeKind,
    cesaro_sample,
    wasserstein1_1d,
)
from .decomposition import total_variation
from .models import FiniteChainModel, HeatModel, RotationTailModel, SlideModel


class NotInvariant(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StationarySpec:
    """Known invariant law of one of the models.

    ``kind`` is ``"gaussian_modes"`` (heat), ``"vector"`` (chain),
    ``"point"`` (slide, mass at ``location``) or ``"uniform"`` (rotation, on ``[-1, 0]``).
    """

    kind: str
    variances: np.ndarray | None = None
    vector: np.ndarray | None = None
    location: float = 0.0
    full_support: bool = False

    def quantiles(self, n: int, column: int | None = None) -> np.ndarray:
        """Midpoint quantiles ``F^{-1}((i - 1/2)/n)`` of a one-dimensional marginal."""
        u = (np.arange(n) + 0.5) / n
        if self.kind == "gaussian_modes":
            return math.sqrt(self.variances[column]) * normal.ppf(u)
        if self.kind == "uniform":
            return -1.0 + u
        if self.kind == "point":
            return np.full(n, self.location)
        raise DomainError(f"no quantile function for {self.kind}")

    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian_modes":
            return gen.standard_normal((n, self.variances.size)) * np.sqrt(self.variances)
        if self.kind == "vector":
            return gen.choice(self.vector.size, size=n, p=self.vector)
        if self.kind == "uniform":
            return -gen.random(n)
        return np.full(n, self.location)


def heat_stationary_law(model: HeatModel) -> StationarySpec:
    """Per-mode ``N(0, sigma_k^2 / (2 k^2))``; full support when every sigma_k > 0."""
    var = model.stationary_variance()
    return StationarySpec("gaussian_modes", variances=var, full_support=bool(np.all(var > 0)))


def invariant_residual(chain: FiniteChainModel, mu) -> float:
    """``TV(mu P, mu)``, exact."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (chain.n,):
        raise ValueError(f"vector of length {chain.n} expected")
    return total_variation(mu @ chain.P, mu)


def recurrent_states(chain: FiniteChainModel) -> np.ndarray:
    """Mask of states lying in a closed communicating class."""
    _, labels = connected_components(chain.P > 0, directed=True, connection="strong")
    leaks = np.zeros(labels.max() + 1, dtype=bool)
    src, dst = np.nonzero(chain.P > 0)
    np.logical_or.at(leaks, labels[src], labels[src] != labels[dst])
    return ~leaks[labels]


def stationary_vector(chain: FiniteChainModel, start=None, tol: float = 1e-13,
                      max_iter: int = 1_000_000) -> np.ndarray:
    """Invariant vector by fixed-point iteration of the lazy chain ``(I + P)/2``.

    The lazy chain shares every invariant measure of ``P`` and is aperiodic,
    so the iteration converges for periodic chains too. Mass left on
    transient states is set to zero and the result is certified with
    ``invariant_residual``.
    """
    v = np.full(chain.n, 1.0 / chain.n) if start is None else np.asarray(start, dtype=float)
    for _ in range(max_iter):
        nxt = 0.5 * (v + v @ chain.P)
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - v)) < tol:
            v = nxt
            break
        v = nxt
    # invariant measures vanish on transient states; drop the slowly draining residue
    v = np.where(recurrent_states(chain), v, 0.0)
    v /= math.fsum(v)
    resid = invariant_residual(chain, v)
    if resid > 1e-12:
        raise NotInvariant(f"fixed-point iteration stalled, residual {resid:.3e}")
    return v


def chain_stationary_law(chain: FiniteChainModel, start=None) -> StationarySpec:
    return StationarySpec("vector", vector=stationary_vector(chain, start))


def stationary_law(model: SemigroupModel, **kw) -> StationarySpec:
    if isinstance(model, HeatModel):
        return heat_stationary_law(model)
    if isinstance(model, FiniteChainModel):
        return chain_stationary_law(model, kw.get("start"))
    if isinstance(model, SlideModel):
        return StationarySpec("point", location=0.0)
    if isinstance(model, RotationTailModel):
        return StationarySpec("uniform")
    raise DomainError(f"no stationary law known for {model.kind}")


def chain_cesaro(chain: FiniteChainModel, nu, t: int) -> np.ndarray:
    """Exact ``Q_t nu = (1/t) sum_{s=1}^t nu P^s``."""
    if t < 1:
        raise DomainError("Cesaro horizon must be >= 1")
    v = np.asarray(nu, dtype=float)
    acc = np.zeros(chain.n)
    for _ in range(int(t)):
        v = v @ chain.P
        acc += v
    return acc / t


DEFAULT_REFERENCE_MODES = 8


def cesaro_convergence(model: SemigroupModel, x: MetricPoint, reference: StationarySpec, t_grid,
                       n_samples: int, rng: RngStream, modes: int = DEFAULT_REFERENCE_MODES):
    """``[(t, divergence of Q_t(x, .) from the reference law)]``.

    Chains use the exact Cesaro vector and total variation. Heat compares
    the sampled marginals of modes ``1 <= |k| <= modes`` against exact
    Gaussian quantiles and reports the largest one-dimensional W1. The
    other models use one-dimensional W1 against the reference quantiles.
    """
    out = []
    if isinstance(model, FiniteChainModel):
        start = model.encode([x])[0]
        delta = np.zeros(model.n)
        delta[start] = 1.0
        for t in t_grid:
            out.append((int(t), total_variation(chain_cesaro(model, delta, int(t)), reference.vector)))
        return out
    for t in t_grid:
        cloud = cesaro_sample(model, x, t, n_samples, rng.child(float(t)))
        if isinstance(model, HeatModel):
            K = min(modes, model.N)
            cols = np.concatenate([np.arange(K), model.N + np.arange(K)])
            div = max(wasserstein1_1d(cloud.points[:, c], reference.quantiles(n_samples, c))
                      for c in cols)
        elif reference.kind == "point":
            ref = np.full(len(cloud), reference.location)
            div = float(np.mean(model.distances(cloud.points, ref)))
        else:
            div = wasserstein1_1d(model.embed(cloud.points), reference.quantiles(n_samples))
        out.append((t, float(div)))
    return out


def birkhoff_average(model: SemigroupModel, f: TestFunction, x: MetricPoint, t_horizon,
                     rng: RngStream, dt: float | None = None) -> float:
    """Time average of ``f`` along one path up to ``t_horizon``.

    Discrete time averages ``f(X_1), ..., f(X_t)``. Continuous time samples
    the path at ``dt, 2 dt, ..., t_horizon`` (default ``dt = 1``, or
    ``t_horizon / 10^4`` for deterministic flows) with exact transitions.
    """
    if t_horizon < 1:
        raise DomainError("t_horizon must be >= 1")
    state = model.encode([x])
    if model.time_kind is TimeKind.DISCRETE:
        steps, h = int(t_horizon), 1
    else:
        h = dt if dt is not None else (t_horizon / 10_000 if model.deterministic else 1.0)
        steps = int(round(t_horizon / h))
    if model.deterministic:
        times = np.arange(1, steps + 1) * h
        if model.time_kind is TimeKind.DISCRETE:
            times = times.astype(np.int64)
        path = model.push(np.repeat(state, steps, axis=0), times, None)
        return math.fsum(f.values(path)) / steps
    gen = rng.generator()
    vals = np.empty(steps)
    for i in range(steps):
        state = model.advance(state, h, gen)
        vals[i] = f.values(state)[0]
    return math.fsum(vals) / steps


@dataclass
class SupportCheck:
    holds: bool
    first_violation: tuple | None = None  # (t, state)


def support_inclusion(chain: FiniteChainModel, nu, mu, t_max: int = 1000,
                      tol: float = 1e-12) -> SupportCheck:
    """Does ``nu P^t`` stay inside ``supp mu`` for every ``t <= t_max``?"""
    nu = np.asarray(nu, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if invariant_residual(chain, mu) > 1e-10:
        raise NotInvariant("mu is not invariant for the chain")
    outside = mu <= tol
    if np.any(nu[outside] > tol):
        raise DomainError("supp nu must lie inside supp mu")
    v = nu
    for t in range(1, int(t_max) + 1):
        v = v @ chain.P
        bad = np.flatnonzero(outside & (v > tol))
        if bad.size:
            return SupportCheck(False, (t, int(bad[0])))
    return SupportCheck(True)


def mixing_time(chain: FiniteChainModel, x: int, mu, eps: float = 0.25, t_max: int = 10_000) -> int:
    """First ``t`` with ``TV(delta_x P^t, mu) <= eps``."""
    v = np.zeros(chain.n)
    v[x] = 1.0
    for t in range(1, t_max + 1):
        v = v @ chain.P
        if total_variation(v, mu) <= eps:
            return t
    raise DomainError("chain did not mix within t_max")
