"""State spaces, measures, observables and Monte-Carlo duals.

Every model keeps its states in a compact numpy representation so that
batches of samples can be pushed through a transition at once:

* ``HeatModel``      -- float array of shape ``(2N,)`` per state (spectral coefficients)
* ``RotationTailModel`` -- float embedding (``Interval(u) -> u``, ``Tail(n) -> 1/n``)
* ``SlideModel``     -- float in ``[0, 1]``
* ``FiniteChainModel`` -- integer state index

The public ``MetricPoint`` dataclasses are the user-facing form; models
convert between the two with ``encode`` / ``decode``.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog


class DomainError(ValueError):
    """A point, time or argument lies outside the model's domain."""


class UnsupportedOperation(RuntimeError):
    """The model does not define the requested operation."""


# --------------------------------------------------------------------------
# points


@dataclass(frozen=True, eq=False)
class Spectral:
    """Zero-mean function on the torus given by real Fourier coefficients.

    ``coeffs`` is ordered as modes ``1..N`` followed by ``-1..-N``; mode 0 is
    never stored.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0 or c.size % 2:
            raise DomainError("spectral coefficient vector must have even length 2N")
        if not np.all(np.isfinite(c)):
            raise DomainError("spectral coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return self.coeffs.size // 2

    @classmethod
    def from_modes(cls, values: dict[int, float], N: int) -> "Spectral":
        c = np.zeros(2 * N)
        for k, v in values.items():
            c[mode_index(k, N)] = v
        return cls(c)

    @classmethod
    def zero(cls, N: int) -> "Spectral":
        return cls(np.zeros(2 * N))

    def coeff(self, k: int) -> float:
        return float(self.coeffs[mode_index(k, self.N)])

    def __eq__(self, other):
        return isinstance(other, Spectral) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())


@dataclass(frozen=True)
class Interval:
    u: float

    def __post_init__(self):
        if not -1.0 <= self.u <= 0.0:
            raise DomainError(f"Interval point must lie in [-1, 0], got {self.u}")


@dataclass(frozen=True)
class Tail:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"Tail index must be an integer >= 1, got {self.n}")


@dataclass(frozen=True)
class Unit:
    x: float

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0:
            raise DomainError(f"Unit point must lie in [0, 1], got {self.x}")


@dataclass(frozen=True)
class ChainState:
    i: int

    def __post_init__(self):
        if int(self.i) != self.i or self.i < 0:
            raise DomainError(f"chain state must be a non-negative integer, got {self.i}")


MetricPoint = Union[Spectral, Interval, Tail, Unit, ChainState]


def mode_index(k: int, N: int) -> int:
    """Position of Fourier mode ``k`` in a coefficient vector of size ``2N``."""
    if k == 0 or abs(k) > N:
        raise DomainError(f"mode {k} outside 1 <= |k| <= {N}")
    return k - 1 if k > 0 else N - k - 1


def spectral_modes(N: int) -> np.ndarray:
    return np.concatenate([np.arange(1, N + 1), -np.arange(1, N + 1)])


# --------------------------------------------------------------------------
# randomness


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    if isinstance(key, (float, np.floating)):
        # the tag bit keeps float keys apart from small integer keys
        return struct.unpack("<Q", struct.pack("<d", float(key)))[0] | (1 << 64)
    if isinstance(key, str):
        return zlib.crc32(key.encode()) | (1 << 65)
    raise TypeError(f"unsupported stream key {key!r}")


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Child streams are a pure function of the parent identity and a key, so
    work split across threads draws the same numbers in any schedule.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def _sequence(self, *keys) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, *(_key_to_int(k) for k in keys))
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._sequence()))

    def child(self, *keys) -> "RngStream":
        sid = int(self._sequence(*keys).generate_state(1, np.uint64)[0])
        return RngStream(self.seed, sid)


# --------------------------------------------------------------------------
# observables and measures


@dataclass(frozen=True)
class TestFunction:
    """Bounded Lipschitz observable acting on a batch of encoded states."""

    fn: Callable[[np.ndarray], np.ndarray]
    lip_constant: float
    sup_bound: float
    name: str = "f"

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.lip_constant < 0 or self.sup_bound < 0:
            raise ValueError("lip_constant and sup_bound must be non-negative")

    def values(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(states), dtype=float)

    def __call__(self, model: "SemigroupModel", point: MetricPoint) -> float:
        return float(self.values(model.encode([point]))[0])

    def shifted(self, c: float) -> "TestFunction":
        return TestFunction(
            lambda s: self.fn(s) + c, self.lip_constant, self.sup_bound + abs(c), f"{self.name}+{c}"
        )

    @classmethod
    def from_vector(cls, values: Sequence[float], name: str = "f") -> "TestFunction":
        """Observable on a finite chain given by its value at each state."""
        v = np.array(values, dtype=float)
        v.setflags(write=False)
        lip = float(np.ptp(v)) if v.size else 0.0
        tf = cls(lambda s: v[np.asarray(s, dtype=int)], lip, float(np.max(np.abs(v), initial=0.0)), name)
        object.__setattr__(tf, "vector", v)
        return tf


def spot_check_test_function(model: "SemigroupModel", f: TestFunction, states: np.ndarray,
                             rng: RngStream, n_pairs: int = 200, tol: float = 1e-12) -> bool:
    """Check the declared sup bound and Lipschitz constant on sampled states."""
    vals = f.values(states)
    if np.any(np.abs(vals) > f.sup_bound + tol):
        return False
    g = rng.generator()
    m = len(states)
    i = g.integers(0, m, n_pairs)
    j = g.integers(0, m, n_pairs)
    d = model.distances(states[i], states[j])
    return bool(np.all(np.abs(vals[i] - vals[j]) <= f.lip_constant * d + tol))


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud over one model's state space."""

    model: "SemigroupModel"
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points)
        n = len(pts)
        if n == 0:
            raise ValueError("empirical measure needs at least one point")
        w = np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (n,) or np.any(w <= 0):
            raise ValueError("weights must be positive, one per point")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points)

    def __iter__(self) -> Iterator[tuple[float, MetricPoint]]:
        for w, p in zip(self.weights, self.points):
            yield float(w), self.model.decode(p)

    def integrate(self, f: TestFunction) -> float:
        return math.fsum(self.weights * f.values(self.points))


class TimeKind(Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


class SemigroupModel:
    """Interface shared by the four example semigroups.

    Subclasses implement the encoding, the metric and ``push``: the
    deterministic map from (state batch, time, noise) to the next states.
    Drawing the noise separately is what makes common random numbers cheap.
    """

    kind: str
    time_kind: TimeKind
    deterministic: bool = False
    one_dimensional: bool = False
    # push() accepts a single state of shape (1, ...) against a noise batch
    broadcast_push: bool = False

    # -- encoding ---------------------------------------------------------
    def encode(self, points: Sequence[MetricPoint]) -> np.ndarray:
        raise NotImplementedError

    def decode(self, state) -> MetricPoint:
        raise NotImplementedError

    def embed(self, states: np.ndarray) -> np.ndarray:
        """Real embedding for 1-D transport (only when ``one_dimensional``)."""
        raise UnsupportedOperation(f"{self.kind} has no one-dimensional embedding")

    # -- metric -----------------------------------------------------------
    def distances(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Row-wise distances between two equally shaped state batches."""
        raise NotImplementedError

    def cost_matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ia, ib = np.meshgrid(np.arange(len(a)), np.arange(len(b)), indexing="ij")
        return self.distances(a[ia.ravel()], b[ib.ravel()]).reshape(len(a), len(b))

    # -- dynamics ---------------------------------------------------------
    def check_time(self, t) -> None:
        t_arr = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t_arr)) or np.any(t_arr < 0):
            raise DomainError(f"time must be finite and non-negative, got {t}")
        if self.time_kind is TimeKind.DISCRETE and np.any(t_arr != np.round(t_arr)):
            raise DomainError(f"{self.kind} has discrete time; got non-integer t={t}")

    def draw_noise(self, gen: np.random.Generator, n: int):
        return None

    def push(self, states: np.ndarray, t, noise) -> np.ndarray:
        raise NotImplementedError

    def advance(self, states: np.ndarray, t, gen: np.random.Generator | None) -> np.ndarray:
        self.check_time(t)
        noise = None if self.deterministic else self.draw_noise(gen, len(states))
        return self.push(states, t, noise)

    def exact_dual_values(self, f: TestFunction, states: np.ndarray, t) -> np.ndarray | None:
        """Exact ``P_t f`` at the given states, or None when only sampling is available."""
        return None

    def default_probes(self, center: np.ndarray, radius: float, count: int,
                       gen: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}


# --------------------------------------------------------------------------
# operations


def distance(model: SemigroupModel, a: MetricPoint, b: MetricPoint) -> float:
    if type(a) is not type(b) and not (isinstance(a, (Interval, Tail)) and isinstance(b, (Interval, Tail))):
        raise DomainError(f"points {a!r} and {b!r} come from different state spaces")
    ea, eb = model.encode([a]), model.encode([b])
    return float(model.distances(ea, eb)[0])


def _repeat(state: np.ndarray, n: int) -> np.ndarray:
    return np.repeat(state[None, ...], n, axis=0)


def sample_transitions(model: SemigroupModel, x: MetricPoint, t, n_samples: int,
                       rng: RngStream) -> np.ndarray:
    """``n_samples`` independent draws from ``P_t delta_x`` as an encoded batch."""
    model.check_time(t)
    state = model.encode([x])[0]
    return model.advance(_repeat(state, n_samples), t, rng.generator())


def sample_transition(model: SemigroupModel, x: MetricPoint, t, rng: RngStream) -> MetricPoint:
    return model.decode(sample_transitions(model, x, t, 1, rng)[0])


def mean_and_stderr(values: np.ndarray) -> tuple[float, float]:
    """Compensated mean and standard error of the mean."""
    v = np.asarray(values, dtype=float)
    n = v.size
    mean = math.fsum(v) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def estimate_dual(model: SemigroupModel, f: TestFunction, x: MetricPoint, t, n_samples: int,
                  rng: RngStream) -> tuple[float, float]:
    """Monte-Carlo estimate of ``P_t f(x)`` with its standard error."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    model.check_time(t)
    if model.deterministic:
        state = model.encode([x])
        return float(f.values(model.push(state, t, None))[0]), 0.0
    return mean_and_stderr(f.values(sample_transitions(model, x, t, n_samples, rng)))


def coupled_transition(model: SemigroupModel, x: MetricPoint, y: MetricPoint, t, rng: RngStream,
                       n_samples: int | None = None):
    """Push ``x`` and ``y`` with one shared noise draw.

    Returns a pair of points, or a pair of encoded batches when
    ``n_samples`` is given.
    """
    if not getattr(model, "supports_coupling", False):
        raise UnsupportedOperation(f"{model.kind} has no common-noise coupling")
    model.check_time(t)
    n = 1 if n_samples is None else n_samples
    ex, ey = model.encode([x, y])
    noise = model.draw_noise(rng.generator(), n)
    xs = model.push(_repeat(ex, n), t, noise)
    ys = model.push(_repeat(ey, n), t, noise)
    if n_samples is None:
        return model.decode(xs[0]), model.decode(ys[0])
    return xs, ys


def cesaro_times(model: SemigroupModel, t, n_samples: int, gen: np.random.Generator) -> np.ndarray:
    if model.time_kind is TimeKind.DISCRETE:
        if t < 1 or t != int(t):
            raise DomainError(f"discrete Cesaro horizon must be an integer >= 1, got {t}")
        return gen.integers(1, int(t) + 1, size=n_samples)
    if not t > 0:
        raise DomainError(f"continuous Cesaro horizon must be > 0, got {t}")
    # uniform on (0, t]
    return t * (1.0 - gen.random(n_samples))


def cesaro_sample(model: SemigroupModel, x: MetricPoint, t, n_samples: int,
                  rng: RngStream) -> EmpiricalMeasure:
    """Unbiased sample of ``Q_t(x, .)``: a uniform random time, then one transition."""
    gen = rng.generator()
    times = cesaro_times(model, t, n_samples, gen)
    state = model.encode([x])[0]
    pts = model.advance(_repeat(state, n_samples), times, gen)
    return EmpiricalMeasure(model, pts)


DEFAULT_MATCHING_CAP = 512


def wasserstein1_1d(a: np.ndarray, b: np.ndarray, wa: np.ndarray | None = None,
                    wb: np.ndarray | None = None) -> float:
    """Exact W1 between weighted samples on the real line (CDF difference integral)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wa = np.full(a.size, 1.0 / a.size) if wa is None else np.asarray(wa, dtype=float)
    wb = np.full(b.size, 1.0 / b.size) if wb is None else np.asarray(wb, dtype=float)
    if a.size == b.size and np.allclose(wa, wa[0]) and np.allclose(wb, wa[0]):
        return math.fsum(np.abs(np.sort(a) - np.sort(b))) / a.size
    grid = np.unique(np.concatenate([a, b]))

    def cdf(x, w):
        order = np.argsort(x, kind="mergesort")
        cum = np.concatenate([[0.0], np.cumsum(w[order])])
        return cum[np.searchsorted(x[order], grid[:-1], side="right")]

    # both CDFs are built the same way, so swapping the arguments is exact
    return math.fsum(np.abs(cdf(a, wa) - cdf(b, wb)) * np.diff(grid))


def wasserstein1(A: EmpiricalMeasure, B: EmpiricalMeasure, model: SemigroupModel | None = None,
                 cap: int = DEFAULT_MATCHING_CAP) -> float:
    """W1 between two empirical measures under the model's metric.

    One-dimensional models use the exact sorted/CDF formula; otherwise an
    exact optimal transport problem is solved on the full cost matrix.
    """
    model = model or A.model
    if A.model is not B.model and A.model.kind != B.model.kind:
        raise DomainError("empirical measures live on different state spaces")
    if model.one_dimensional:
        return wasserstein1_1d(model.embed(A.points), model.embed(B.points), A.weights, B.weights)
    if len(A) > cap or len(B) > cap:
        raise DomainError(
            f"exact matching capped at {cap} points; got {len(A)} and {len(B)} "
            "(project to one dimension first)"
        )
    cost = model.cost_matrix(A.points, B.points)
    if len(A) == len(B) and np.allclose(A.weights, A.weights[0]) and np.allclose(B.weights, A.weights[0]):
        rows, cols = linear_sum_assignment(cost)
        return math.fsum(cost[rows, cols]) / len(A)
    return _transport_lp(cost, A.weights, B.weights)


def _transport_lp(cost: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> float:
    m, n = cost.shape
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([wa, wb]), bounds=(0, None),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)
