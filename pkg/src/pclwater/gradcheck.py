"""Finite-difference checks of every analytic gradient in the package.

Each case builds a scalar function of one flat parameter vector together with
its analytic gradient, and compares against central differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grouping import align_confidence, intra_group_sample
from .losses import LossParams, bce_loss, inter_loss, intra_loss
from .raster import FracRect, sample_bilinear_adjoint
from .toy import ToyModel, _Tile

CASES = ("bce", "inter", "intra", "align", "model")


@dataclass(frozen=True)
class CheckResult:
    case: str
    seed: int
    rel_error: float


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        old = x[k]
        x[k] = old + h
        fp = f(x)
        x[k] = old - h
        fm = f(x)
        x[k] = old
        g[k] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """Largest absolute deviation over the largest gradient entry."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-300)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _maps(rng, k, size):
    # Kept away from the clamp so the loss is smooth around every sample point.
    return rng.uniform(0.05, 0.95, (k, size, size))


def _bce_case(rng, size, params):
    y = rng.integers(0, 2, (size, size)).astype(np.float64)

    def f(x):
        return bce_loss(x.reshape(size, size), y).value

    def grad(x):
        return bce_loss(x.reshape(size, size), y, name="p").grads["p"].ravel()

    return f, grad, _maps(rng, 1, size).ravel()


def _inter_case(rng, size, params):
    y = rng.integers(0, 2, (size, size)).astype(np.float64)

    def f(x):
        m = x.reshape(3, size, size)
        return inter_loss(m[0], [m[1], m[2]], y, params).value

    def grad(x):
        m = x.reshape(3, size, size)
        g = inter_loss(m[0], [m[1], m[2]], y, params).grads
        return np.concatenate([g["p_1st"].ravel(), g["p_2nd"].ravel(), g["p_3rd"].ravel()])

    return f, grad, _maps(rng, 3, size).ravel()


def _intra_case(rng, size, params):
    group = intra_group_sample(size + size // 2, size, (0, 0))
    ys = rng.integers(0, 2, (4, size, size)).astype(np.float64)

    def f(x):
        return intra_loss(list(x.reshape(4, size, size)), list(ys), group, params).value

    def grad(x):
        g = intra_loss(list(x.reshape(4, size, size)), list(ys), group, params).grads
        return np.concatenate([g[f"p_{k + 1}"].ravel() for k in range(4)])

    return f, grad, _maps(rng, 4, size).ravel()


def _align_case(rng, size, params):
    # A coarse map aligned through a fractional footprint, then the inter term.
    y = rng.integers(0, 2, (size, size)).astype(np.float64)
    p1 = _maps(rng, 1, size)[0]
    h = rng.uniform(1.0, size - 1.0)
    fp = FracRect(rng.uniform(0, size - h), rng.uniform(0, size - h), h, h)

    def f(x):
        q = align_confidence(x.reshape(size, size), fp, size)
        return inter_loss(p1, [q], y, params).value

    def grad(x):
        q = align_confidence(x.reshape(size, size), fp, size)
        g = inter_loss(p1, [q], y, params).grads["p_2nd"]
        return sample_bilinear_adjoint(g, fp, (size, size)).ravel()

    return f, grad, _maps(rng, 1, size).ravel()


def _model_case(rng, size, params):
    # Toy-model parameters through both tile forwards, the alignment and the
    # inter term: the full chain used in training.
    anchor = rng.uniform(0, 1, (size, size, 3))
    coarse = rng.uniform(0, 1, (size, size, 3))
    y = rng.integers(0, 2, (size, size)).astype(np.float64)
    h = rng.uniform(1.0, size - 1.0)
    fp = FracRect(rng.uniform(0, size - h), rng.uniform(0, size - h), h, h)

    def parts(x):
        model = ToyModel.from_params(x)
        t1, t2 = _Tile(model, anchor), _Tile(model, coarse)
        res = inter_loss(t1.p, [align_confidence(t2.p, fp, size)], y, params)
        return res, t1, t2

    def f(x):
        return parts(x)[0].value

    def grad(x):
        res, t1, t2 = parts(x)
        return (t1.backward(res.grads["p_1st"])
                + t2.backward(sample_bilinear_adjoint(res.grads["p_2nd"], fp, (size, size))))

    return f, grad, rng.normal(0.0, 0.5, 13)


_BUILDERS = {"bce": _bce_case, "inter": _inter_case, "intra": _intra_case,
             "align": _align_case, "model": _model_case}


def build_case(case: str, seed: int, size: int = 8, params: LossParams = LossParams()):
    """Return ``(f, grad, x0)`` for one seeded instance of ``case``."""
    rng = np.random.default_rng([seed, CASES.index(case)])
    return _BUILDERS[case](rng, size, params)


def check_case(case: str, seed: int, size: int = 8, params: LossParams = LossParams(),
               h: float = 1e-4) -> CheckResult:
    f, grad, x0 = build_case(case, seed, size, params)
    return CheckResult(case, seed, relative_error(grad(x0), central_difference(f, x0, h)))


def run_suite(seeds: int = 200, size: int = 8, params: LossParams = LossParams(),
              cases=CASES, start: int = 0) -> list[CheckResult]:
    return [check_case(c, s, size, params) for s in range(start, start + seeds) for c in cases]
