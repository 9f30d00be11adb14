"""Stenosis-degree estimation from a (noisy) pressure or flow curve.

The degree is the minimizer over [0, 1] of the normalized misfit

    J(R) = |y - f(R)|^2 / (2 |y|^2)

between the measurement y and a surrogate f. Its derivative comes from the
analytic kernel derivative. Minimization is multi-start projected gradient
descent with Armijo backtracking, seeded additionally by a dense scan and
finished by a bracketed root search on J' so that flat minima are still
located to high accuracy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .kernels import InterpolantModel

STARTS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    sigma: float = 0.0
    seed: int | None = None
    true_degree: float | None = None
    noise: np.ndarray | None = None


def make_measurement(f_true, sigma: float, seed: int = 0, true_degree: float | None = None) -> Measurement:
    """y = f_true + sigma * v with v ~ uniform(0, 1) per sample (no mean correction)."""
    f_true = np.asarray(f_true, dtype=float)
    if sigma < 0:
        raise ValueError("noise level must be nonnegative")
    v = np.random.default_rng(seed).random(f_true.shape)
    return Measurement(f_true + sigma * v, float(sigma), seed, true_degree, v)


def _norm_sq(y) -> float:
    n2 = float(np.dot(y, y))
    if n2 == 0.0:
        raise ValueError("measurement has zero norm")
    return n2


def cost(R: float, y, model: InterpolantModel) -> float:
    y = np.asarray(y, dtype=float)
    r = y - model.evaluate(float(R))
    return float(np.dot(r, r)) / (2.0 * _norm_sq(y))


def cost_gradient(R: float, y, model: InterpolantModel) -> float:
    """dJ/dR = -(y - f(R)) . f'(R) / |y|^2."""
    y = np.asarray(y, dtype=float)
    r = y - model.evaluate(float(R))
    return -float(np.dot(r, model.evaluate_derivative(float(R)))) / _norm_sq(y)


def cost_profile(y, model: InterpolantModel, n: int = 1001):
    """J on n equally spaced degrees in [0, 1]; returns (grid, values)."""
    if n < 2:
        raise ValueError("profile needs at least two points")
    y = np.asarray(y, dtype=float)
    grid = np.linspace(0.0, 1.0, n)
    r = y[None, :] - model.evaluate(grid)
    return grid, np.einsum("ij,ij->i", r, r) / (2.0 * _norm_sq(y))


@dataclass(frozen=True)
class OptimizerSettings:
    starts: tuple[float, ...] = STARTS
    armijo: float = 1e-4
    shrink: float = 0.5
    max_iter: int = 200
    grad_tol: float = 1e-10
    scan_points: int = 1001
    polish: bool = True


@dataclass
class EstimationResult:
    degree: float
    cost: float
    iterations: int
    converged: bool
    start: float
    profile: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def to_dict(self, measurement: Measurement | None = None) -> dict:
        d = {"degree": self.degree, "cost": self.cost, "iterations": self.iterations,
             "converged": self.converged, "start": self.start}
        if measurement is not None:
            d.update({"sigma": measurement.sigma, "seed": measurement.seed,
                      "true_degree": measurement.true_degree})
            if measurement.true_degree is not None:
                d["error"] = abs(self.degree - measurement.true_degree)
        return d

    def to_json(self, measurement: Measurement | None = None, **extra) -> str:
        d = self.to_dict(measurement)
        d.update(extra)
        return json.dumps(d, sort_keys=True, indent=1) + "\n"


def _projected_gradient(x0, y, model, st: OptimizerSettings):
    x = float(np.clip(x0, 0.0, 1.0))
    J, g = cost(x, y, model), cost_gradient(x, y, model)
    alpha = 0.25 / max(abs(g), 1e-300)
    x_prev = g_prev = None
    converged = False
    it = 0
    for it in range(1, st.max_iter + 1):
        pg = x - np.clip(x - g, 0.0, 1.0)
        if abs(pg) < st.grad_tol:
            converged = True
            break
        if x_prev is not None and g != g_prev:
            bb = (x - x_prev) / (g - g_prev)
            if bb > 0:
                alpha = bb
        a = alpha
        while True:
            xn = float(np.clip(x - a * g, 0.0, 1.0))
            Jn = cost(xn, y, model)
            if Jn <= J + st.armijo * g * (xn - x) or abs(xn - x) < 1e-16:
                break
            a *= st.shrink
        if xn == x:
            converged = True
            break
        x_prev, g_prev = x, g
        x, J = xn, Jn
        g = cost_gradient(x, y, model)
    return x, J, it, converged


def _polish(x, y, model, J):
    """Refine an interior stationary point by a bracketed root search on J'."""
    g = cost_gradient(x, y, model)
    if g == 0.0:
        return x, J
    step = 1e-8
    direction = -np.sign(g)
    lo = x
    while step < 1.0:
        hi = float(np.clip(x + direction * step, 0.0, 1.0))
        gh = cost_gradient(hi, y, model)
        if np.sign(gh) != np.sign(g):
            a, b = sorted((lo, hi))
            r = brentq(cost_gradient, a, b, args=(y, model), xtol=1e-15,
                       rtol=4 * np.finfo(float).eps, maxiter=200)
            Jr = cost(r, y, model)
            return (r, Jr) if Jr <= J else (x, J)
        if hi in (0.0, 1.0):
            break
        lo = hi
        step *= 4.0
    return x, J


def estimate(y, model: InterpolantModel, settings: OptimizerSettings | None = None) -> EstimationResult:
    """Bounded minimization of J over [0, 1] from several starts; best local result wins."""
    st = settings or OptimizerSettings()
    y = np.asarray(y, dtype=float)
    _norm_sq(y)
    starts = list(st.starts)
    profile = None
    if st.scan_points:
        profile = cost_profile(y, model, st.scan_points)
        starts.append(float(profile[0][int(np.argmin(profile[1]))]))
    best = None
    for s in starts:
        x, J, it, conv = _projected_gradient(s, y, model, st)
        if st.polish:
            x, J = _polish(x, y, model, J)
        if best is None or J < best.cost:
            best = EstimationResult(x, J, it, conv, s)
    best.profile = profile
    return best
