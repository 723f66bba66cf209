"""Inductive splitting of ``delta_{x0} P^{s_1 + ... + s_k}`` on a finite chain.

At every stage the current law ``theta`` puts mass above ``alpha`` on the
set ``B``; it is written as ``alpha * nu + (1 - alpha) * mu`` with ``nu``
the normalised restriction to ``B``. Pushing the remainder ``mu`` forward
until it again charges ``B`` gives the next stage. Summing the stages
reproduces the original law up to a ``(1 - alpha)^k`` remainder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError
from .models import FiniteChainModel, chain_exact_distribution

PROB_TOL = 1e-12


class NoEntryTime(RuntimeError):
    """No time up to ``t_max`` pushes more than ``alpha`` of the mass into ``B``."""

    def __init__(self, message: str, stage: int | None = None):
        super().__init__(message)
        self.stage = stage


class InsufficientMass(ValueError):
    pass


@dataclass
class DecompositionTrace:
    alpha: float
    B: tuple
    x0: int
    s: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    nus: list = field(default_factory=list)
    mus: list = field(default_factory=list)
    residual_tv: float | None = None

    @property
    def k(self) -> int:
        return len(self.s)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "B": list(self.B),
            "x0": self.x0,
            "s": list(self.s),
            "nus": [v.tolist() for v in self.nus],
            "mus": [v.tolist() for v in self.mus],
            "residual_tv": self.residual_tv,
        }


def _mask(n: int, B) -> np.ndarray:
    B = sorted(set(int(b) for b in B))
    if not B:
        raise DomainError("B must be non-empty")
    if B[0] < 0 or B[-1] >= n:
        raise DomainError(f"B must contain states in 0..{n - 1}")
    m = np.zeros(n, dtype=bool)
    m[B] = True
    return m


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie strictly between 0 and 1")


def find_entry_time(chain: FiniteChainModel, nu, B, alpha: float, t_max: int = 10_000) -> int:
    """Smallest ``t`` in ``[1, t_max]`` with ``(nu P^t)(B) > alpha``."""
    _check_alpha(alpha)
    if t_max < 1:
        raise DomainError("t_max must be >= 1")
    mask = _mask(chain.n, B)
    v = np.asarray(nu, dtype=float)
    for t in range(1, t_max + 1):
        v = v @ chain.P
        if math.fsum(v[mask]) > alpha:
            return t
    raise NoEntryTime(f"mass in B never exceeds alpha={alpha} within t_max={t_max}")


def split_measure(theta, B, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """``theta = alpha * nu + (1 - alpha) * mu`` with ``nu = theta(. & B) / theta(B)``."""
    _check_alpha(alpha)
    theta = np.asarray(theta, dtype=float)
    mask = _mask(theta.size, B)
    mass = math.fsum(theta[mask])
    if not mass > alpha:
        raise InsufficientMass(f"theta(B)={mass} does not exceed alpha={alpha}")
    nu = np.where(mask, theta, 0.0) / mass
    mu = (theta - alpha * nu) / (1.0 - alpha)
    # clip rounding noise; on B the entry is theta*(1 - alpha/mass)/(1 - alpha) >= 0
    mu = np.where(np.abs(mu) < PROB_TOL, 0.0, mu)
    if np.any(mu < 0):
        raise InsufficientMass("split produced negative mass")
    return nu, mu


def build_decomposition(chain: FiniteChainModel, x0: int, B, alpha: float, k: int,
                        t_max: int = 10_000) -> DecompositionTrace:
    """Run ``k`` stages of the splitting construction from ``delta_{x0}``."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if not 0 <= x0 < chain.n:
        raise DomainError(f"x0 must be a state in 0..{chain.n - 1}")
    _mask(chain.n, B)
    trace = DecompositionTrace(alpha, tuple(sorted(set(int(b) for b in B))), int(x0))
    current = np.zeros(chain.n)
    current[x0] = 1.0
    for stage in range(1, k + 1):
        try:
            s = find_entry_time(chain, current, B, alpha, t_max)
        except NoEntryTime as exc:
            raise NoEntryTime(f"stage {stage}: {exc}", stage=stage) from None
        theta = chain_exact_distribution(chain, current, s)
        nu, mu = split_measure(theta, B, alpha)
        trace.s.append(s)
        trace.thetas.append(theta)
        trace.nus.append(nu)
        trace.mus.append(mu)
        current = mu
    return trace


def total_variation(p, q) -> float:
    return 0.5 * math.fsum(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)))


def verify_telescoping(chain: FiniteChainModel, trace: DecompositionTrace) -> float:
    """TV gap between ``delta_{x0} P^{s_1+...+s_k}`` and the staged mixture.

    The mixture is ``sum_i alpha (1-alpha)^{i-1} nu_i P^{s_{i+1}+...+s_k}
    + (1-alpha)^k mu_k``. The gap is stored on the trace.
    """
    if not trace.s or any(len(v) != chain.n for v in trace.nus + trace.mus):
        raise DomainError("trace does not belong to this chain")
    a, k = trace.alpha, trace.k
    lhs = np.zeros(chain.n)
    lhs[trace.x0] = 1.0
    lhs = chain_exact_distribution(chain, lhs, sum(trace.s))
    rhs = (1.0 - a) ** k * trace.mus[-1]
    for i in range(k):
        later = sum(trace.s[i + 1:])
        rhs = rhs + a * (1.0 - a) ** i * chain_exact_distribution(chain, trace.nus[i], later)
    trace.residual_tv = total_variation(lhs, rhs)
    return trace.residual_tv


def stages_for_tolerance(alpha: float, eps: float, sup_f: float) -> int:
    """First ``k >= 1`` with ``2 (1 - alpha)^k sup|f| < eps``."""
    _check_alpha(alpha)
    if eps <= 0 or sup_f < 0:
        raise ValueError("eps must be positive and sup_f non-negative")
    if sup_f == 0:
        return 1
    k = max(1, math.ceil(math.log(eps / (2.0 * sup_f)) / math.log(1.0 - alpha)))
    # the closed form lands on equality when the log ratio is an integer
    while 2.0 * (1.0 - alpha) ** k * sup_f >= eps:
        k += 1
    while k > 1 and 2.0 * (1.0 - alpha) ** (k - 1) * sup_f < eps:
        k -= 1
    return k


def largest_alpha(chain: FiniteChainModel, x0: int, B, t_max: int = 10_000,
                  tol: float = 1e-12) -> float:
    """Largest ``alpha`` (to ``tol``) for which stage 1 finds an entry time.

    Bisection on ``alpha``; the answer approaches ``max_{1<=t<=t_max} (delta_{x0} P^t)(B)``
    from below.
    """
    start = np.zeros(chain.n)
    start[x0] = 1.0

    def ok(a: float) -> bool:
        try:
            find_entry_time(chain, start, B, a, t_max)
            return True
        except NoEntryTime:
            return False

    lo, hi = 0.0, 1.0
    if not ok(tol):
        raise NoEntryTime("B is never charged from x0 within t_max")
    lo = tol
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
