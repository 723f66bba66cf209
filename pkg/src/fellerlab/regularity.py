"""Estimators for the regularity moduli of a Markov semigroup.

Each estimator compares ``P_t f`` at probe points ``x`` near a centre ``z``
with ``P_t f(z)``. Monte-Carlo duals at every probe and at the centre share
one noise draw per time value (common random numbers), so differences carry
paired standard errors. The stream for time ``t`` is keyed by the value of
``t``; two grids that share a time see identical noise, which keeps the
ordering relations between the moduli exact.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import (
    DomainError,
    MetricPoint,
    RngStream,
    SemigroupModel,
    TestFunction,
    TimeKind,
    UnsupportedOperation,
    EmpiricalMeasure,
    mean_and_stderr,
    wasserstein1,
    wasserstein1_1d,
)

PROBE_TOL = 1e-12


@dataclass(frozen=True)
class ProbePlan:
    """Centre, shrinking radii and a rule producing probes inside each ball."""

    center: MetricPoint
    radii: tuple
    probes_per_radius: int = 10
    rule: Callable | None = None

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0 for r in radii):
            raise ValueError("radii must be a non-empty sequence of positive numbers")
        if any(a <= b for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly decreasing")
        object.__setattr__(self, "radii", radii)

    def probes(self, model: SemigroupModel, rng: RngStream) -> list[np.ndarray]:
        center = model.encode([self.center])[0]
        rule = self.rule or model.default_probes
        out = []
        for r in self.radii:
            gen = rng.child("probes", r).generator()
            pts = np.asarray(rule(center, r, self.probes_per_radius, gen))
            if len(pts) == 0:
                raise DomainError(f"probe rule produced no points at radius {r}")
            d = model.distances(pts, np.repeat(center[None, ...], len(pts), axis=0))
            if np.any(d > r + PROBE_TOL):
                raise DomainError(f"probe rule produced a point outside radius {r}")
            out.append(pts)
        return out


@dataclass
class ModulusCell:
    radius: float
    window: object  # a time value or a (t0, t1) window
    value: float
    std_error: float
    witness: MetricPoint | None
    witness_t: float | None


@dataclass
class RadiusModulus:
    radius: float
    modulus: float
    std_error: float
    witness: MetricPoint | None
    witness_t: float | None
    t_min: float | None = None


@dataclass
class ModulusReport:
    definition: str
    center: MetricPoint
    entries: list[RadiusModulus]
    cells: list[ModulusCell]
    metadata: dict = field(default_factory=dict)

    def moduli(self) -> np.ndarray:
        return np.array([e.modulus for e in self.entries])


class Verdict(str, Enum):
    CONSISTENT = "ConsistentWithHolding"
    VIOLATED = "ViolatedWithWitness"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class PropertyVerdict:
    verdict: Verdict
    threshold: float
    definition: str
    witness: RadiusModulus | None = None


# --------------------------------------------------------------------------
# dual evaluation engine


def _times(model: SemigroupModel, t_grid) -> list:
    ts = list(t_grid)
    if not ts:
        raise ValueError("time grid must be non-empty")
    for t in ts:
        model.check_time(t)
    if model.time_kind is TimeKind.DISCRETE:
        return [int(t) for t in ts]
    return [float(t) for t in ts]


def _push_from(model, state, t, noise, n):
    if model.broadcast_push:
        return model.push(state[None, ...], t, noise)
    return model.push(np.repeat(state[None, ...], n, axis=0), t, noise)


def paired_differences(model: SemigroupModel, f: TestFunction, center: np.ndarray,
                       probes: np.ndarray, t, n_samples: int, rng: RngStream):
    """``P_t f(x) - P_t f(z)`` for every probe ``x`` with paired standard errors.

    Also returns the centre estimate and the probe estimates themselves.
    """
    stack = np.concatenate([center[None, ...], probes])
    exact = model.exact_dual_values(f, stack, t)
    if exact is None and model.deterministic:
        exact = f.values(model.push(stack, t, None))
    if exact is not None:
        exact = np.asarray(exact, dtype=float)
        zeros = np.zeros(len(probes))
        return exact[1:] - exact[0], zeros, exact[0], exact[1:]
    gen = rng.child(float(t)).generator()
    noise = model.draw_noise(gen, n_samples)
    fc = f.values(_push_from(model, center, t, noise, n_samples))
    center_est, _ = mean_and_stderr(fc)
    diffs = np.empty(len(probes))
    ses = np.empty(len(probes))
    ests = np.empty(len(probes))
    for i, p in enumerate(probes):
        fp = f.values(_push_from(model, p, t, noise, n_samples))
        diffs[i], ses[i] = mean_and_stderr(fp - fc)
        ests[i] = mean_and_stderr(fp)[0]
    return diffs, ses, center_est, ests


def _map_times(fn, ts, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, ts))
    return [fn(t) for t in ts]


def _unique_probes(groups: list[np.ndarray]):
    allp = np.concatenate(groups)
    uniq, inverse = np.unique(allp, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    bounds = np.cumsum([0] + [len(g) for g in groups])
    members = [inverse[bounds[i]:bounds[i + 1]] for i in range(len(groups))]
    return uniq, members


def _meta(model, plan, ts, n_samples, rng, **extra):
    meta = {
        "model": model.kind,
        "model_params": model.params(),
        "center": repr(plan.center),
        "radii": list(plan.radii),
        "probes_per_radius": plan.probes_per_radius,
        "t_grid": list(ts),
        "n_samples": n_samples,
        "seed": rng.seed,
        "stream_id": rng.stream_id,
    }
    meta.update(extra)
    return meta


def _sweep(model, f, plan, ts, n_samples, rng, threads):
    """Per time: the |difference| and paired error at every unique probe."""
    groups = plan.probes(model, rng)
    uniq, members = _unique_probes(groups)
    center = model.encode([plan.center])[0]

    def at(t):
        d, s, _, _ = paired_differences(model, f, center, uniq, t, n_samples, rng)
        return np.abs(d), s

    table = _map_times(at, ts, threads)
    return uniq, members, table


def _cells_by_time(model, plan, uniq, members, ts, table):
    """For each (radius, t): the probe with the largest |difference|."""
    cells = []
    for ri, r in enumerate(plan.radii):
        idx = members[ri]
        for t, (absd, se) in zip(ts, table):
            j = idx[int(np.argmax(absd[idx]))]
            cells.append(ModulusCell(r, t, float(absd[j]), float(se[j]), model.decode(uniq[j]), t))
    return cells


def _best_cell(cells: list[ModulusCell], radius: float, t_floor=None) -> RadiusModulus:
    pool = [c for c in cells if c.radius == radius and (t_floor is None or c.window >= t_floor)]
    if not pool:
        raise ValueError(f"no grid times at or above t_min={t_floor}")
    best = max(pool, key=lambda c: c.value)
    return RadiusModulus(radius, best.value, best.std_error, best.witness, best.witness_t, t_floor)


# --------------------------------------------------------------------------
# moduli


def e_modulus(model: SemigroupModel, f: TestFunction, plan: ProbePlan, t_grid, n_samples: int,
              rng: RngStream, threads: int = 1) -> ModulusReport:
    """``max_{x in B(z, r)} sup_{t in grid} |P_t f(x) - P_t f(z)|`` for each radius."""
    ts = _times(model, t_grid)
    uniq, members, table = _sweep(model, f, plan, ts, n_samples, rng, threads)
    cells = _cells_by_time(model, plan, uniq, members, ts, table)
    entries = [_best_cell(cells, r) for r in plan.radii]
    return ModulusReport("e", plan.center, entries, cells, _meta(model, plan, ts, n_samples, rng))


def eventual_e_modulus(model: SemigroupModel, f: TestFunction, plan: ProbePlan, t_min, t_grid,
                       n_samples: int, rng: RngStream, threads: int = 1) -> ModulusReport:
    """Same sup as ``e_modulus`` but only over ``t >= t_min``.

    ``t_min`` may be a list of candidates; each radius reports the candidate
    giving the smallest modulus (the threshold time may depend on the radius).
    """
    candidates = sorted(np.atleast_1d(t_min).tolist())
    ts = _times(model, t_grid)
    if min(ts) < candidates[0]:
        raise ValueError("t_grid must lie in [t_min, inf)")
    uniq, members, table = _sweep(model, f, plan, ts, n_samples, rng, threads)
    cells = _cells_by_time(model, plan, uniq, members, ts, table)
    entries = []
    for r in plan.radii:
        options = [_best_cell(cells, r, tm) for tm in candidates if any(t >= tm for t in ts)]
        entries.append(min(options, key=lambda e: e.modulus))
    meta = _meta(model, plan, ts, n_samples, rng, t_min=candidates)
    return ModulusReport("eventual_e", plan.center, entries, cells, meta)


def window_times(model: SemigroupModel, window, points: int = 20) -> list:
    """Grid of times inside a tail window ``(t0, t1)`` (or an explicit list)."""
    if not isinstance(window, tuple):
        return _times(model, window)
    t0, t1 = window
    if t1 < t0:
        raise ValueError(f"window {window} is empty")
    if model.time_kind is TimeKind.DISCRETE:
        t0, t1 = int(math.ceil(t0)), int(math.floor(t1))
        if t1 - t0 + 1 <= points:
            return list(range(t0, t1 + 1))
        return sorted({int(round(v)) for v in np.linspace(t0, t1, points)})
    return [float(v) for v in np.linspace(t0, t1, points)]


def eventual_continuity_modulus(model: SemigroupModel, f: TestFunction, plan: ProbePlan,
                                tail_windows, n_samples: int, rng: RngStream,
                                window_points: int = 20, threads: int = 1) -> ModulusReport:
    """``max_x min_window sup_{t in window} |P_t f(x) - P_t f(z)|`` per radius.

    The inner minimum lets every probe pick its own window, which is what
    separates this modulus from ``eventual_e_modulus``.
    """
    windows = [tuple(w) if isinstance(w, (list, tuple)) and len(w) == 2 else w for w in tail_windows]
    if not windows:
        raise ValueError("at least one tail window is required")
    grids = [window_times(model, w, window_points) for w in windows]
    ts = sorted(set(t for g in grids for t in g))
    uniq, members, table = _sweep(model, f, plan, ts, n_samples, rng, threads)
    col = {t: i for i, t in enumerate(ts)}
    absd = np.stack([a for a, _ in table], axis=1)  # probes x times
    ses = np.stack([s for _, s in table], axis=1)
    P = len(uniq)
    win_sup = np.empty((P, len(windows)))
    win_arg = np.empty((P, len(windows)), dtype=int)
    for wi, g in enumerate(grids):
        cols = np.array([col[t] for t in g])
        sub = absd[:, cols]
        k = np.argmax(sub, axis=1)
        win_sup[:, wi] = sub[np.arange(P), k]
        win_arg[:, wi] = cols[k]
    best_w = np.argmin(win_sup, axis=1)
    per_probe = win_sup[np.arange(P), best_w]
    cells, entries = [], []
    for ri, r in enumerate(plan.radii):
        idx = members[ri]
        for wi, w in enumerate(windows):
            j = idx[int(np.argmax(win_sup[idx, wi]))]
            tj = ts[win_arg[j, wi]]
            cells.append(ModulusCell(r, w, float(win_sup[j, wi]), float(ses[j, win_arg[j, wi]]),
                                     model.decode(uniq[j]), tj))
        j = idx[int(np.argmax(per_probe[idx]))]
        c = win_arg[j, best_w[j]]
        entries.append(RadiusModulus(r, float(per_probe[j]), float(ses[j, c]), model.decode(uniq[j]),
                                     ts[c]))
    meta = _meta(model, plan, ts, n_samples, rng, windows=[list(w) if isinstance(w, tuple) else w
                                                          for w in windows])
    return ModulusReport("eventual_continuity", plan.center, entries, cells, meta)


def reevaluate_witness(model: SemigroupModel, f: TestFunction, report: ModulusReport,
                       entry: RadiusModulus, rng: RngStream) -> tuple[float, float]:
    """Recompute ``|P_t f(witness) - P_t f(z)|`` at the reported witness time."""
    n = report.metadata["n_samples"]
    center = model.encode([report.center])[0]
    probe = model.encode([entry.witness])
    d, s, _, _ = paired_differences(model, f, center, probe, entry.witness_t, n, rng)
    return float(abs(d[0])), float(s[0])


# --------------------------------------------------------------------------
# curves


def strong_continuity_deficit(model: SemigroupModel, f: TestFunction, t_small_grid,
                              probe_states: Sequence[MetricPoint], n_samples: int,
                              rng: RngStream):
    """``[(t, max_x |P_t f(x) - f(x)|, std_error)]`` over the probe states."""
    if model.time_kind is not TimeKind.CONTINUOUS:
        raise UnsupportedOperation("strong continuity is defined for continuous time only")
    ts = _times(model, t_small_grid)
    states = model.encode(list(probe_states))
    f0 = f.values(states)
    out = []
    for t in ts:
        ex = model.exact_dual_values(f, states, t)
        if ex is None and model.deterministic:
            ex = f.values(model.push(states, t, None))
        if ex is not None:
            dev = np.abs(np.asarray(ex) - f0)
            se = np.zeros(len(states))
        else:
            gen = rng.child(float(t)).generator()
            noise = model.draw_noise(gen, n_samples)
            dev, se = np.empty(len(states)), np.empty(len(states))
            for i, s in enumerate(states):
                m, se[i] = mean_and_stderr(f.values(_push_from(model, s, t, noise, n_samples)))
                dev[i] = abs(m - f0[i])
        j = int(np.argmax(dev))
        out.append((t, float(dev[j]), float(se[j])))
    return out


def mixing_gap(model: SemigroupModel, f: TestFunction, x: MetricPoint, y: MetricPoint,
               tail_windows, n_samples: int, rng: RngStream, window_points: int = 20):
    """``[(window, sup_{t in window} |P_t f(x) - P_t f(y)|, std_error)]``."""
    ex, ey = model.encode([x, y])
    out = []
    for w in tail_windows:
        w = tuple(w) if isinstance(w, (list, tuple)) and len(w) == 2 else w
        best = (-1.0, 0.0)
        for t in window_times(model, w, window_points):
            d, s, _, _ = paired_differences(model, f, ex, ey[None, ...], t, n_samples, rng)
            if abs(d[0]) > best[0]:
                best = (float(abs(d[0])), float(s[0]))
        out.append((w, best[0], best[1]))
    return out


def stability_gap(model: SemigroupModel, x: MetricPoint, y: MetricPoint, t_grid, n_samples: int,
                  rng: RngStream, projection: Callable[[np.ndarray], np.ndarray] | None = None):
    """``[(t, W1(P_t delta_x, P_t delta_y))]`` from two independent sample clouds.

    ``projection`` maps encoded states to reals; the distance is then the
    exact one-dimensional W1 of the projected clouds.
    """
    ts = _times(model, t_grid)
    ex, ey = model.encode([x, y])
    out = []
    for t in ts:
        if model.deterministic:
            xs = model.push(ex[None, ...], t, None)
            ys = model.push(ey[None, ...], t, None)
        else:
            xs = model.advance(np.repeat(ex[None, ...], n_samples, axis=0), t,
                               rng.child("x", float(t)).generator())
            ys = model.advance(np.repeat(ey[None, ...], n_samples, axis=0), t,
                               rng.child("y", float(t)).generator())
        if projection is not None:
            w = wasserstein1_1d(projection(xs), projection(ys))
        else:
            w = wasserstein1(EmpiricalMeasure(model, xs), EmpiricalMeasure(model, ys), model)
        out.append((t, float(w)))
    return out


def classify(report: ModulusReport, threshold: float = 0.05) -> PropertyVerdict:
    """Three-way decision with 3-sigma guard bands around ``threshold``.

    The properties concern ``r -> 0``, so the violation test looks at the
    smallest radius: a modulus that is large only at coarse radii is no
    evidence against equicontinuity.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    smallest = report.entries[-1]
    if smallest.modulus - 3 * smallest.std_error > threshold and smallest.witness is not None:
        return PropertyVerdict(Verdict.VIOLATED, threshold, report.definition, smallest)
    m = report.moduli()
    monotone = bool(np.all(np.diff(m) <= 0))
    if smallest.modulus + 3 * smallest.std_error < threshold and monotone:
        return PropertyVerdict(Verdict.CONSISTENT, threshold, report.definition)
    return PropertyVerdict(Verdict.INCONCLUSIVE, threshold, report.definition)
