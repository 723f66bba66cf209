"""The four example semigroups, sampled exactly.

* ``HeatModel`` -- stochastic heat equation on the torus, truncated to
  modes ``1 <= |k| <= N``; every mode is an independent OU process.
* ``RotationTailModel`` -- irrational rotation of ``[-1, 0]`` fed by the
  tail ``1/n -> 1/(n-1)``, ``1 -> 0``.
* ``SlideModel`` -- ``S_t(x) = (x - t)_+`` on ``[0, 1]`` under either the
  Euclidean metric or the metric that isolates the point 1.
* ``FiniteChainModel`` -- a row-stochastic matrix with exact duals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    ChainState,
    DomainError,
    Interval,
    RngStream,
    SemigroupModel,
    Spectral,
    Tail,
    TimeKind,
    Unit,
    mean_and_stderr,
    mode_index,
    spectral_modes,
)

# --------------------------------------------------------------------------
# heat equation


@dataclass(frozen=True)
class PowerLawNoise:
    """Noise intensities ``sigma_k = c / |k|**p``.

    ``sum sigma_k^2`` stays finite as ``N -> infinity`` only when ``p > 1/2``.
    """

    c: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("noise amplitude c must be non-negative")
        if not self.p > 0.5:
            raise ValueError(f"sigma_k = c/|k|^p needs p > 1/2 for finite trace, got p={self.p}")

    def __call__(self, k: np.ndarray) -> np.ndarray:
        return self.c / np.abs(k) ** self.p

    def describe(self) -> dict:
        return {"rule": "power", "c": self.c, "p": self.p}


@dataclass(frozen=True)
class GaussianModeLaw:
    mean: float
    variance: float


class HeatModel(SemigroupModel):
    """Spectral stochastic heat equation with exact Gaussian transitions.

    A state is the vector of real coefficients ``phi_k``; at time ``t`` mode
    ``k`` is ``phi_k e^{-k^2 t} + sigma_k sqrt((1 - e^{-2k^2 t}) / (2k^2)) Z_k``.
    """

    kind = "heat"
    time_kind = TimeKind.CONTINUOUS
    supports_coupling = True
    broadcast_push = True

    def __init__(self, N: int = 256, noise: Callable[[np.ndarray], np.ndarray] | None = None,
                 probe_modes: int = 4):
        if int(N) != N or N < 1:
            raise ValueError("mode cutoff N must be an integer >= 1")
        self.N = int(N)
        self.noise = noise if noise is not None else PowerLawNoise()
        self.modes = spectral_modes(self.N)
        self.k2 = (self.modes.astype(float)) ** 2
        sigma = np.asarray(self.noise(self.modes), dtype=float)
        if sigma.shape != self.modes.shape or np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ValueError("noise rule must give finite sigma_k >= 0 for every mode")
        self.sigma = sigma
        self.probe_modes = min(probe_modes, self.N)

    def params(self) -> dict:
        desc = self.noise.describe() if hasattr(self.noise, "describe") else {"rule": "custom"}
        return {"N": self.N, "noise": desc}

    def sigma_of(self, k: int) -> float:
        return float(self.sigma[mode_index(k, self.N)])

    # encoding
    def encode(self, points):
        out = np.empty((len(points), 2 * self.N))
        for i, p in enumerate(points):
            if not isinstance(p, Spectral):
                raise DomainError(f"heat model expects Spectral points, got {p!r}")
            if p.N != self.N:
                raise DomainError(f"point has N={p.N}, model has N={self.N}")
            out[i] = p.coeffs
        return out

    def decode(self, state):
        return Spectral(np.array(state))

    def distances(self, a, b):
        return np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))

    # dynamics
    def decay_and_sd(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Per-mode mean factor ``e^{-k^2 t}`` and fluctuation standard deviation."""
        tt = np.asarray(t, dtype=float)[..., None]
        decay = np.exp(-self.k2 * tt)
        sd = self.sigma * np.sqrt(-np.expm1(-2.0 * self.k2 * tt) / (2.0 * self.k2))
        return decay, sd

    def draw_noise(self, gen, n):
        return gen.standard_normal((n, 2 * self.N))

    def push(self, states, t, noise):
        decay, sd = self.decay_and_sd(t)
        return states * decay + sd * noise

    def default_probes(self, center, radius, count, gen):
        # random directions in the lowest modes, at exactly the probe radius
        K = self.probe_modes
        idx = np.concatenate([np.arange(K), self.N + np.arange(K)])
        dirs = gen.standard_normal((count, idx.size))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        probes = np.repeat(center[None, :], count, axis=0)
        probes[:, idx] += radius * dirs
        return probes

    def stationary_variance(self) -> np.ndarray:
        return self.sigma**2 / (2.0 * self.k2)


def heat_mode_law(model: HeatModel, k: int, phi_k: float, t: float) -> GaussianModeLaw:
    if t < 0:
        raise DomainError("time must be non-negative")
    sigma = model.sigma_of(k)
    if math.isinf(t):
        return GaussianModeLaw(0.0, sigma**2 / (2 * k * k))
    return GaussianModeLaw(phi_k * math.exp(-k * k * t),
                           sigma**2 * -math.expm1(-2 * k * k * t) / (2 * k * k))


def norm(state: Spectral, kind: str = "L2") -> float:
    """L2 or H1 norm of a spectral state."""
    c = state.coeffs
    if kind == "L2":
        return math.sqrt(math.fsum(c * c))
    if kind == "H1":
        k2 = spectral_modes(state.N).astype(float) ** 2
        return math.sqrt(math.fsum(k2 * c * c))
    raise ValueError(f"unknown norm {kind!r}")


def h1_norms(model: HeatModel, states: np.ndarray) -> np.ndarray:
    """Row-wise H1 norms of a batch of encoded heat states."""
    return np.sqrt(np.sum(model.k2 * states**2, axis=-1))


def deterministic_h1_profile(model: HeatModel, phi: Spectral, t_grid: Sequence[float]):
    """``[(t, ||A(t)||_{H^1})]`` for the noise-free part ``A(t) = sum phi_k e^{-k^2 t} e_k``."""
    c2 = phi.coeffs**2 * model.k2
    out = []
    for t in t_grid:
        if not t > 0:
            raise DomainError("profile times must be positive")
        out.append((float(t), math.sqrt(math.fsum(c2 * np.exp(-2.0 * model.k2 * t)))))
    return out


def harmonic_phi(N: int) -> Spectral:
    """``phi_k = 1/|k|``: in L2 but with H1 norm growing like sqrt(2N)."""
    return Spectral(1.0 / np.abs(spectral_modes(N)).astype(float))


@dataclass(frozen=True)
class CounterexampleScan:
    rows: list  # (t, P_tF(phi), se, P_tF(phi_tilde), se)
    spread: float

    def as_tuples(self):
        return [(t, a, b) for t, a, _, b, _ in self.rows]


def counterexample_scan(model: HeatModel, phi: Spectral, phi_tilde: Spectral,
                        t_grid: Sequence[float], n_samples: int, rng: RngStream,
                        chunk: int = 500) -> CounterexampleScan:
    """Estimate ``P_t F`` at two starts for ``F = sin ||.||_{H^1}`` along a time grid."""
    ex, ey = model.encode([phi, phi_tilde])
    rows = []
    for t in t_grid:
        model.check_time(t)
        gen = rng.child(float(t)).generator()
        decay, sd = model.decay_and_sd(t)
        ax, ay = ex * decay, ey * decay
        fx, fy = np.empty(n_samples), np.empty(n_samples)
        for lo in range(0, n_samples, chunk):
            hi = min(lo + chunk, n_samples)
            m = sd * gen.standard_normal((hi - lo, 2 * model.N))
            fx[lo:hi] = np.sin(h1_norms(model, ax + m))
            fy[lo:hi] = np.sin(h1_norms(model, ay + m))
        mx, sx = mean_and_stderr(fx)
        my, sy = mean_and_stderr(fy)
        rows.append((float(t), mx, sx, my, sy))
    est = [r[1] for r in rows]
    return CounterexampleScan(rows, max(est) - min(est) if est else 0.0)


# --------------------------------------------------------------------------
# rotation with tail

DEFAULT_GAMMA = -1.0 / math.sqrt(2.0)


def _rotate(u: np.ndarray, m: np.ndarray, gamma: float) -> np.ndarray:
    """``m`` rotation steps from ``u`` with representative interval ``[-1, 0]``."""
    v = u + m * gamma
    w = v - np.floor(v) - 1.0
    return np.where(m == 0, u, w)


class RotationTailModel(SemigroupModel):
    """Deterministic map on ``[-1, 0] U {1/n}``: rotation by ``gamma`` plus a feeding tail."""

    kind = "rotation_tail"
    time_kind = TimeKind.DISCRETE
    deterministic = True
    one_dimensional = True

    def __init__(self, gamma: float = DEFAULT_GAMMA, n_max: int = 10_000):
        if not -1.0 < gamma < 0.0:
            raise ValueError("gamma must lie in (-1, 0)")
        if n_max < 10_000:
            raise ValueError("n_max must be at least 10^4")
        self.gamma = float(gamma)
        self.n_max = int(n_max)

    def params(self):
        return {"gamma": self.gamma, "n_max": self.n_max}

    def encode(self, points):
        out = np.empty(len(points))
        for i, p in enumerate(points):
            if isinstance(p, Interval):
                out[i] = p.u
            elif isinstance(p, Tail):
                if p.n > self.n_max:
                    raise DomainError(f"Tail({p.n}) beyond n_max={self.n_max}")
                out[i] = 1.0 / p.n
            else:
                raise DomainError(f"rotation model expects Interval/Tail points, got {p!r}")
        return out

    def decode(self, state):
        x = float(state)
        return Tail(int(round(1.0 / x))) if x > 0 else Interval(x)

    def embed(self, states):
        return np.asarray(states, dtype=float)

    def distances(self, a, b):
        return np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))

    def push(self, states, t, noise):
        x = np.asarray(states, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), x.shape)
        tail = x > 0
        n = np.where(tail, np.rint(1.0 / np.where(tail, x, 1.0)), 0).astype(np.int64)
        still_tail = tail & (t < n)
        u0 = np.where(tail, 0.0, x)
        m = np.where(tail, t - n, t)
        out = _rotate(u0, np.maximum(m, 0), self.gamma)
        return np.where(still_tail, 1.0 / np.maximum(n - t, 1), out)

    def default_probes(self, center, radius, count, gen):
        c = float(np.asarray(center).reshape(-1)[0])
        n = np.arange(1, self.n_max + 1)
        tails = 1.0 / n
        tails = tails[np.abs(tails - c) <= radius]
        lo, hi = max(-1.0, c - radius), min(0.0, c + radius)
        mesh = np.linspace(lo, hi, count) if lo <= hi else np.empty(0)
        return np.concatenate([tails, mesh])


def rotation_step(model: RotationTailModel, x):
    """One application of the map: tail moves down, the interval rotates."""
    if isinstance(x, Tail):
        return Tail(x.n - 1) if x.n >= 2 else Interval(0.0)
    if not isinstance(x, Interval):
        raise DomainError(f"expected Interval or Tail, got {x!r}")
    v = x.u + model.gamma
    return Interval(v if v >= -1.0 else v + 1.0)


# --------------------------------------------------------------------------
# slide


class SlideModel(SemigroupModel):
    """``S_t(x) = (x - t)_+`` on ``[0, 1]`` with metric ``rho`` (Euclidean) or ``d``.

    Under ``d`` the point 1 is isolated (``d(x, 1) = 1`` for ``x < 1``), so
    indicator-type functions of ``{1}`` become continuous.
    """

    kind = "slide"
    time_kind = TimeKind.CONTINUOUS
    deterministic = True

    def __init__(self, metric: str = "rho"):
        if metric not in ("rho", "d"):
            raise ValueError(f"metric must be 'rho' or 'd', got {metric!r}")
        self.metric = metric
        self.one_dimensional = metric == "rho"

    def params(self):
        return {"metric": self.metric}

    def encode(self, points):
        out = np.empty(len(points))
        for i, p in enumerate(points):
            if not isinstance(p, Unit):
                raise DomainError(f"slide model expects Unit points, got {p!r}")
            out[i] = p.x
        return out

    def decode(self, state):
        return Unit(float(state))

    def embed(self, states):
        if self.metric != "rho":
            return super().embed(states)
        return np.asarray(states, dtype=float)

    def distances(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        gap = np.abs(a - b)
        if self.metric == "rho":
            return gap
        one_a, one_b = a == 1.0, b == 1.0
        return np.where(one_a ^ one_b, 1.0, np.where(one_a & one_b, 0.0, gap))

    def push(self, states, t, noise):
        return np.maximum(np.asarray(states, dtype=float) - np.asarray(t, dtype=float), 0.0)

    def default_probes(self, center, radius, count, gen):
        c = float(np.asarray(center).reshape(-1)[0])
        mesh = np.linspace(max(0.0, c - radius), min(1.0, c + radius), count)
        mesh = mesh[self.distances(mesh, np.full(mesh.shape, c)) <= radius]
        return mesh if mesh.size else np.array([c])


def slide_flow(x: float, t: float) -> float:
    if not 0.0 <= x <= 1.0 or t < 0:
        raise DomainError("slide flow needs x in [0, 1] and t >= 0")
    return max(x - t, 0.0)


# --------------------------------------------------------------------------
# finite chains


class FiniteChainModel(SemigroupModel):
    """Markov chain on ``{0, ..., n-1}`` with transition matrix ``P``.

    States sit at ``positions`` on the real line (default: their index),
    which fixes the metric. With ``exact_duals`` the regularity estimators
    use ``P^t f`` computed exactly instead of sampling.
    """

    kind = "finite_chain"
    time_kind = TimeKind.DISCRETE
    one_dimensional = True

    def __init__(self, P, positions=None, exact_duals: bool = False):
        P = np.array(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ValueError("transition matrix must be square and non-empty")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be non-negative")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("every row of P must sum to 1 within 1e-12")
        P.setflags(write=False)
        self.P = P
        self.n = P.shape[0]
        pos = np.arange(self.n, dtype=float) if positions is None else np.array(positions, dtype=float)
        if pos.shape != (self.n,):
            raise ValueError("one position per state required")
        self.positions = pos
        self.exact_duals = exact_duals
        self._powers: dict[int, np.ndarray] = {0: np.eye(self.n)}

    def params(self):
        return {"P": self.P.tolist(), "positions": self.positions.tolist()}

    def power(self, t: int) -> np.ndarray:
        t = int(t)
        if t not in self._powers:
            self._powers[t] = np.linalg.matrix_power(self.P, t)
        return self._powers[t]

    def encode(self, points):
        out = np.empty(len(points), dtype=np.int64)
        for i, p in enumerate(points):
            if not isinstance(p, ChainState) or p.i >= self.n:
                raise DomainError(f"expected ChainState below {self.n}, got {p!r}")
            out[i] = p.i
        return out

    def decode(self, state):
        return ChainState(int(state))

    def embed(self, states):
        return self.positions[np.asarray(states, dtype=np.int64)]

    def distances(self, a, b):
        return np.abs(self.embed(a) - self.embed(b))

    def draw_noise(self, gen, n):
        return gen.random(n)

    def push(self, states, t, noise):
        states = np.asarray(states, dtype=np.int64)
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), states.shape)
        out = np.empty_like(states)
        # inverse-CDF sampling from the exact row of P^t; shared uniforms give
        # a monotone coupling across starting states
        for tv in np.unique(t):
            sel = t == tv
            cdf = np.cumsum(self.power(tv)[states[sel]], axis=1)
            idx = np.sum(noise[sel][:, None] >= cdf, axis=1)
            out[sel] = np.minimum(idx, self.n - 1)
        return out

    def exact_dual_values(self, f, states, t):
        vec = getattr(f, "vector", None)
        if not self.exact_duals or vec is None:
            return None
        return chain_exact_dual(self, vec, int(t))[np.asarray(states, dtype=np.int64)]

    def default_probes(self, center, radius, count, gen):
        c = np.full(self.n, int(np.asarray(center).reshape(-1)[0]))
        states = np.arange(self.n)
        return states[self.distances(states, c) <= radius]


FiniteChain = FiniteChainModel


def _check_vector(chain: FiniteChainModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (chain.n,):
        raise ValueError(f"vector of length {chain.n} expected, got shape {v.shape}")
    return v


def chain_exact_dual(chain: FiniteChainModel, f, t: int) -> np.ndarray:
    """``P^t f`` by repeated matrix-vector products."""
    v = _check_vector(chain, f)
    if t < 0 or int(t) != t:
        raise DomainError("t must be a non-negative integer")
    for _ in range(int(t)):
        v = chain.P @ v
    return v


def chain_exact_distribution(chain: FiniteChainModel, nu, t: int) -> np.ndarray:
    """``nu P^t`` by repeated vector-matrix products."""
    v = _check_vector(chain, nu)
    if t < 0 or int(t) != t:
        raise DomainError("t must be a non-negative integer")
    for _ in range(int(t)):
        v = v @ chain.P
    return v


def random_positive_chain(n: int, gen: np.random.Generator) -> FiniteChainModel:
    P = gen.random((n, n)) + 0.05
    return FiniteChainModel(_normalize_rows(P))


def _normalize_rows(P: np.ndarray) -> np.ndarray:
    P = P / P.sum(axis=1, keepdims=True)
    # push the rounding residue into the largest entry of each row
    resid = 1.0 - P.sum(axis=1)
    P[np.arange(len(P)), np.argmax(P, axis=1)] += resid
    return P
