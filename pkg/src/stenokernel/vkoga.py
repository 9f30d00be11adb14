"""Greedy sparse kernel surrogates (f-greedy selection on a Newton basis).

Centers are added one at a time: the next center is the not yet selected
data point with the largest residual 2-norm. The Newton basis of the
regularized kernel K + reg*delta makes each step a rank-one update, so the
surrogate never has to be refactorized from scratch.

Cross-validation over (shape, regularization) grids reuses one kernel matrix
per shape value for all folds and regularization values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import solve_triangular

from .kernels import InterpolantModel, KernelConfig, _as_points, kernel_matrix, reg_grid, shape_grid

POWER_TOL = 5e-8
RESIDUAL_TOL = 1e-12
CV_GREEDY_CAP = 200
REPORT_FORMAT = "stenokernel-training-report"
REPORT_VERSION = 1


class GreedyBreakdown(ArithmeticError):
    pass


@dataclass
class GreedyState:
    """Selection state of a greedy run over a fixed data set."""

    X: np.ndarray                   # (N, d) data points
    kernel: KernelConfig
    selected: list[int] = field(default_factory=list)
    basis: np.ndarray | None = None     # (N, n) Newton basis values at the data points
    coeffs: np.ndarray | None = None    # (n, q) Newton coefficients
    residual: np.ndarray | None = None  # (N, q)
    power_sq: np.ndarray | None = None  # (N,) squared power function at the data points

    @property
    def n(self) -> int:
        return len(self.selected)

    def cholesky_factor(self) -> np.ndarray:
        """Lower-triangular L with L L^T = K(X_n, X_n) + reg I."""
        return self.basis[self.selected, :]

    def model(self) -> InterpolantModel:
        q = self.residual.shape[1]
        if self.n == 0:
            return InterpolantModel(self.X[:0].copy(), np.zeros((0, q)), self.kernel, q)
        L = self.cholesky_factor()
        alpha = solve_triangular(L.T, self.coeffs, lower=False)
        return InterpolantModel(self.X[self.selected].copy(), alpha, self.kernel, q)


@dataclass
class GreedyReport:
    """Per-iteration log of a greedy run."""

    selected: list[int]
    max_residual: list[float]       # over unselected points, before each selection
    max_power: list[float]          # P (not P^2), over unselected points, before each selection
    stop_reason: str
    # residual 2-norms and P at all data points before each selection, plus the final state
    residual_history: list[np.ndarray] | None = None
    power_history: list[np.ndarray] | None = None

    def to_dict(self) -> dict:
        return {"selected": list(self.selected),
                "max_residual": [float(v) for v in self.max_residual],
                "max_power": [float(v) for v in self.max_power],
                "stop_reason": self.stop_reason}


def power_function(state: GreedyState, x) -> np.ndarray:
    """Regularized power function sqrt(K(x,x) - k(x)^T (A_n + reg I)^-1 k(x)) at points x."""
    X = _as_points(x)
    diag = np.diag(kernel_matrix(X[:1], X[:1], state.kernel))[0] * np.ones(X.shape[0])
    if state.n == 0:
        return np.sqrt(diag)
    k = kernel_matrix(state.X[state.selected], X, state.kernel)
    v = solve_triangular(state.cholesky_factor(), k, lower=True)
    p2 = diag - np.sum(v * v, axis=0)
    if np.any(p2 < -1e-12):
        raise GreedyBreakdown(f"negative power function value {p2.min():.3e}")
    return np.sqrt(np.clip(p2, 0.0, None))


STOP_REASONS = ("max_n", "power", "residual", "breakdown", "exhausted")


@njit(cache=True)
def _greedy_core(K, F, reg, max_n, power_tol, residual_tol, keep_history):
    N, q = F.shape
    basis = np.zeros((N, max_n))
    coeffs = np.zeros((max_n, q))
    residual = F.copy()
    p2 = np.empty(N)
    for i in range(N):
        p2[i] = K[i, i]
    free = np.ones(N, dtype=np.bool_)
    selected = np.empty(max_n, dtype=np.int64)
    max_res = np.empty(max_n)
    max_pow = np.empty(max_n)
    hist = max_n + 1 if keep_history else 0
    res_hist = np.zeros((hist, N))
    pow_hist = np.zeros((hist, N))
    dmax = 1.0
    for i in range(N):
        dmax = max(dmax, K[i, i])
    roundoff = 1e2 * 2.220446049250313e-16 * dmax
    norms = np.empty(N)
    reason = 0
    n = 0
    while n < max_n:
        best, mres, mpow = -1, -1.0, 0.0
        for i in range(N):
            s = 0.0
            for j in range(q):
                s += residual[i, j] * residual[i, j]
            norms[i] = math.sqrt(s)
            if free[i]:
                if norms[i] > mres:
                    mres = norms[i]
                    best = i
                pw = math.sqrt(max(p2[i], 0.0))
                if pw > mpow:
                    mpow = pw
        if keep_history:
            for i in range(N):
                res_hist[n, i] = norms[i]
                pow_hist[n, i] = math.sqrt(max(p2[i], 0.0))
        if best < 0:
            reason = 4
            break
        if mpow < power_tol:
            reason = 1
            break
        if mres < residual_tol:
            reason = 2
            break
        beta2 = p2[best] + reg
        if not beta2 > roundoff:
            reason = 3
            break
        max_res[n] = mres
        max_pow[n] = mpow
        beta = math.sqrt(beta2)
        for i in range(N):
            s = K[i, best]
            for m in range(n):
                s -= basis[i, m] * basis[best, m]
            if i == best:
                s += reg
            basis[i, n] = s / beta
        for j in range(q):
            coeffs[n, j] = residual[best, j] / beta
        for i in range(N):
            v = basis[i, n]
            for j in range(q):
                residual[i, j] -= v * coeffs[n, j]
            p2[i] -= v * v
        p2[best] = 0.0
        free[best] = False
        selected[n] = best
        n += 1
    if keep_history and reason == 0:
        for i in range(N):
            s = 0.0
            for j in range(q):
                s += residual[i, j] * residual[i, j]
            res_hist[n, i] = math.sqrt(s)
            pow_hist[n, i] = math.sqrt(max(p2[i], 0.0))
    return (selected[:n], basis[:, :n].copy(), coeffs[:n].copy(), residual, p2, max_res[:n].copy(),
            max_pow[:n].copy(), reason, res_hist[:n + 1].copy(), pow_hist[:n + 1].copy())


def greedy_run(K: np.ndarray, F: np.ndarray, reg: float, max_n: int, power_tol: float = POWER_TOL,
               residual_tol: float = RESIDUAL_TOL, keep_history: bool = False):
    """Core f-greedy loop on a precomputed kernel matrix.

    The candidate with the largest residual 2-norm wins; ties go to the lowest
    index. Returns (selected, basis, coeffs, residual, power_sq, report).
    """
    K = np.ascontiguousarray(K, dtype=float)
    F = np.ascontiguousarray(F, dtype=float)
    (sel, basis, coeffs, residual, p2, mres, mpow, reason,
     rh, ph) = _greedy_core(K, F, float(reg), int(max_n), float(power_tol), float(residual_tol),
                            bool(keep_history))
    selected = [int(i) for i in sel]
    report = GreedyReport(selected, mres.tolist(), mpow.tolist(), STOP_REASONS[reason],
                          list(rh) if keep_history else None, list(ph) if keep_history else None)
    return selected, basis, coeffs, residual, p2, report


def vkoga_fit(X, F, kc: KernelConfig, power_tol: float = POWER_TOL, max_n: int | None = None,
              residual_tol: float = RESIDUAL_TOL, keep_history: bool = False):
    """Sparse greedy surrogate of the data (X, F); returns (model, report, state)."""
    X = _as_points(X)
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty data set")
    if F.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} points but {F.shape[0]} value rows")
    N = X.shape[0]
    max_n = N if max_n is None else min(int(max_n), N)
    K = kernel_matrix(X, X, kc)
    sel, basis, coeffs, residual, p2, report = greedy_run(K, F, kc.reg, max_n, power_tol,
                                                          residual_tol, keep_history)
    state = GreedyState(X, kc, sel, basis, coeffs, residual, p2)
    return state.model(), report, state


# --------------------------------------------------------------------------
# cross-validation

@dataclass(frozen=True)
class CvSpec:
    folds: int = 10
    epsilons: tuple[float, ...] = tuple(shape_grid())
    regs: tuple[float, ...] = tuple(reg_grid())
    seed: int = 0
    family: str = "gaussian"
    smoothness: int = 1
    greedy_cap: int = CV_GREEDY_CAP

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("at least two folds are required")
        if not self.epsilons or not self.regs:
            raise ValueError("parameter grids must be nonempty")


@dataclass
class CvResult:
    epsilon: float
    reg: float
    scores: np.ndarray          # (len(epsilons), len(regs)) mean max-error score
    model: InterpolantModel
    report: GreedyReport
    folds: list[np.ndarray]
    spec: CvSpec

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION,
                "cv": {"folds": self.spec.folds, "seed": self.spec.seed,
                       "family": self.spec.family,
                       "epsilons": [float(e) for e in self.spec.epsilons],
                       "regs": [float(r) for r in self.spec.regs],
                       "scores": self.scores.tolist(),
                       "best": {"epsilon": self.epsilon, "reg": self.reg}},
                "greedy": self.report.to_dict(),
                "n_centers": self.model.n_centers}


def fold_split(N: int, k: int, seed: int) -> list[np.ndarray]:
    """Random permutation split into k disjoint, nonempty folds."""
    if N < k:
        raise ValueError(f"{N} points cannot be split into {k} folds")
    perm = np.random.default_rng(seed).permutation(N)
    folds = [np.sort(f) for f in np.array_split(perm, k)]
    if any(f.size == 0 for f in folds):
        raise ValueError("degenerate (empty) fold")
    return folds


def _predict(K_rows: np.ndarray, sel, basis, coeffs) -> np.ndarray:
    if not sel:
        return np.zeros((K_rows.shape[0], coeffs.shape[1]))
    alpha = solve_triangular(basis[sel, :].T, coeffs, lower=False)
    return K_rows[:, sel] @ alpha


def _row_space_coordinates(F: np.ndarray) -> np.ndarray:
    """F expressed in an orthonormal basis of its row space.

    Residuals and errors of any kernel fit stay in that row space, so all
    row norms are preserved while the output dimension drops to rank(F).
    """
    if F.shape[1] <= F.shape[0]:
        return F
    U, S, _ = np.linalg.svd(F, full_matrices=False)
    return U * S


def cross_validate(X, F, spec: CvSpec, power_tol: float = POWER_TOL,
                   residual_tol: float = RESIDUAL_TOL) -> CvResult:
    """k-fold grid search of (epsilon, reg) by mean held-out max error, then a full refit."""
    X = _as_points(X)
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    N = X.shape[0]
    folds = fold_split(N, spec.folds, spec.seed)
    G = _row_space_coordinates(F)
    scores = np.empty((len(spec.epsilons), len(spec.regs)))
    base = KernelConfig(spec.family, 1.0, 0.0, spec.smoothness)
    for a, eps in enumerate(spec.epsilons):
        K = kernel_matrix(X, X, base.with_params(epsilon=eps))
        for b, reg in enumerate(spec.regs):
            errs = []
            for te in folds:
                tr = np.setdiff1d(np.arange(N), te)
                cap = min(tr.size, spec.greedy_cap)
                sel, basis, coeffs, *_ = greedy_run(K[np.ix_(tr, tr)], G[tr], reg, cap,
                                                    power_tol, residual_tol)
                pred = _predict(K[np.ix_(te, tr)], sel, basis, coeffs)
                errs.append(np.max(np.linalg.norm(G[te] - pred, axis=1)))
            scores[a, b] = float(np.mean(errs))
    a, b = np.unravel_index(int(np.argmin(scores)), scores.shape)
    kc = base.with_params(epsilon=spec.epsilons[a], reg=spec.regs[b])
    model, report, _ = vkoga_fit(X, F, kc, power_tol=power_tol, residual_tol=residual_tol)
    return CvResult(float(spec.epsilons[a]), float(spec.regs[b]), scores, model, report, folds, spec)
