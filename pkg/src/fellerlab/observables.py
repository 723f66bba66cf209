"""Ready-made test functions for the example models."""
from __future__ import annotations

import math

import numpy as np

from .core import SemigroupModel, TestFunction, mode_index
from .models import HeatModel, h1_norms


def coordinate(model: SemigroupModel | None = None) -> TestFunction:
    """The real embedding ``x -> x`` of a one-dimensional state space."""
    return TestFunction(lambda s: np.asarray(s, dtype=float), 1.0, 1.0, "coordinate")


def min_distance(center: float = 0.0, cap: float = 1.0) -> TestFunction:
    """``x -> min(|x - center|, cap)`` on a one-dimensional embedding."""
    return TestFunction(lambda s: np.minimum(np.abs(np.asarray(s, dtype=float) - center), cap),
                        1.0, cap, f"min(|x-{center}|,{cap})")


def indicator_of_one() -> TestFunction:
    """Indicator of ``{1}``; continuous (and 1-Lipschitz) only under the slide metric ``d``."""
    return TestFunction(lambda s: (np.asarray(s, dtype=float) == 1.0).astype(float), 1.0, 1.0, "1{x=1}")


def sin_coordinate(scale: float = 1.0) -> TestFunction:
    return TestFunction(lambda s: np.sin(scale * np.asarray(s, dtype=float)), abs(scale), 1.0,
                        f"sin({scale}x)")


def mode_coefficient(model: HeatModel, k: int) -> TestFunction:
    """Coefficient of Fourier mode ``k`` (Lipschitz, not bounded)."""
    j = mode_index(k, model.N)
    return TestFunction(lambda s: s[..., j], 1.0, math.inf, f"coeff[{k}]")


def sin_mode(model: HeatModel, k: int) -> TestFunction:
    j = mode_index(k, model.N)
    return TestFunction(lambda s: np.sin(s[..., j]), 1.0, 1.0, f"sin(coeff[{k}])")


def squared_l2(model: HeatModel) -> TestFunction:
    return TestFunction(lambda s: np.sum(s**2, axis=-1), math.inf, math.inf, "|psi|^2")


def clipped_l2(model: HeatModel) -> TestFunction:
    return TestFunction(lambda s: np.minimum(np.sqrt(np.sum(s**2, axis=-1)), 1.0), 1.0, 1.0,
                        "min(|psi|,1)")


def sin_h1(model: HeatModel) -> TestFunction:
    """``sin ||psi||_{H^1}``: bounded and continuous on H1, not Lipschitz in L2."""
    return TestFunction(lambda s: np.sin(h1_norms(model, s)), math.inf, 1.0, "sin|psi|_H1")


def random_lipschitz_heat(model: HeatModel, gen: np.random.Generator, modes: int = 8) -> TestFunction:
    """Random 1-Lipschitz (in L2), bounded observable depending on the lowest modes.

    ``psi -> sin(<w, psi> + c)`` with ``|w| = 1`` or ``psi -> min(|P(psi - a)|, 1)``
    with ``P`` the projection on the low modes, chosen at random.
    """
    K = min(modes, model.N)
    idx = np.concatenate([np.arange(K), model.N + np.arange(K)])
    if gen.random() < 0.5:
        w = gen.standard_normal(idx.size)
        w /= np.linalg.norm(w)
        c = gen.uniform(0, 2 * math.pi)
        return TestFunction(lambda s: np.sin(s[..., idx] @ w + c), 1.0, 1.0, "sin(<w,psi>+c)")
    a = gen.standard_normal(idx.size) * 0.5
    return TestFunction(lambda s: np.minimum(np.linalg.norm(s[..., idx] - a, axis=-1), 1.0),
                        1.0, 1.0, "min(|P(psi-a)|,1)")
