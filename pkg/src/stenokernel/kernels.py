"""Radial kernels, kernel matrices and regularized vector-valued interpolation.

Two families are provided:

* ``gaussian``: K(x, y) = exp(-eps^2 |x - y|^2)
* ``wendland``: compactly supported piecewise polynomials phi(eps |x - y|)
  of smoothness order k in {0, 1, 2}, supported on eps |x - y| < 1.

All outputs share one center set, so a single factorization serves every
component of a vector-valued target.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

MODEL_FORMAT = "stenokernel-model"
MODEL_VERSION = 1
FAMILIES = ("gaussian", "wendland")


class KernelFactorizationError(LinAlgError):
    """The (regularized) kernel matrix is numerically not positive definite."""


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    family: str = "gaussian"
    epsilon: float = 1.0
    reg: float = 0.0
    smoothness: int = 1     # Wendland only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.epsilon > 0:
            raise ValueError("shape parameter must be positive")
        if not self.reg >= 0:
            raise ValueError("regularization must be nonnegative")
        if self.family == "wendland" and self.smoothness not in (0, 1, 2):
            raise ValueError("Wendland smoothness order must be 0, 1 or 2")

    def with_params(self, epsilon: float | None = None, reg: float | None = None) -> KernelConfig:
        return KernelConfig(self.family, self.epsilon if epsilon is None else float(epsilon),
                            self.reg if reg is None else float(reg), self.smoothness)


def _as_points(x) -> np.ndarray:
    """Points as an (n, d) float array; scalars and 1-D arrays are 1-D inputs."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[:, None]
    return x


def _wendland_l(d: int, k: int) -> int:
    return d // 2 + k + 1


def _phi(r: np.ndarray, kc: KernelConfig, d: int) -> np.ndarray:
    if kc.family == "gaussian":
        return np.exp(-r * r)
    l, k = _wendland_l(d, kc.smoothness), kc.smoothness
    t = np.clip(1.0 - r, 0.0, None)
    if k == 0:
        return t ** l
    if k == 1:
        return t ** (l + 1) * ((l + 1) * r + 1.0)
    a, b = l * l + 4 * l + 3, 3 * l + 6
    return t ** (l + 2) * (a * r * r + b * r + 3.0) / 3.0


def _dphi_over_r(r: np.ndarray, kc: KernelConfig, d: int) -> np.ndarray:
    """phi'(r)/r, the radial factor of the kernel gradient."""
    if kc.family == "gaussian":
        return -2.0 * np.exp(-r * r)
    l, k = _wendland_l(d, kc.smoothness), kc.smoothness
    if k == 0:
        raise ValueError("Wendland kernel of order 0 is not differentiable")
    t = np.clip(1.0 - r, 0.0, None)
    if k == 1:
        return -(l + 1) * (l + 2) * t ** l
    a = l * l + 4 * l + 3
    return -(l + 4) * t ** (l + 1) * (a * r + (l + 3)) / 3.0


def kernel_matrix(X, Y, kc: KernelConfig) -> np.ndarray:
    """[K(x_i, y_j)] for point sets X (n, d) and Y (m, d)."""
    X, Y = _as_points(X), _as_points(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("point dimensions differ")
    diff = X[:, None, :] - Y[None, :, :]
    r = kc.epsilon * np.sqrt(np.sum(diff * diff, axis=-1))
    return _phi(r, kc, X.shape[1])


def kernel_eval(x, y, kc: KernelConfig) -> float:
    return float(kernel_matrix(_as_points(x).reshape(1, -1), _as_points(y).reshape(1, -1), kc)[0, 0])


def kernel_gradient(X, Y, kc: KernelConfig) -> np.ndarray:
    """dK(x_i, y_j)/dx_i as an (n, m, d) array."""
    X, Y = _as_points(X), _as_points(Y)
    diff = X[:, None, :] - Y[None, :, :]
    r = kc.epsilon * np.sqrt(np.sum(diff * diff, axis=-1))
    return (_dphi_over_r(r, kc, X.shape[1]) * kc.epsilon ** 2)[:, :, None] * diff


def factorize(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix; raises with a condition estimate."""
    try:
        return cholesky(A, lower=True, check_finite=True)
    except LinAlgError as exc:
        cond = np.linalg.cond(A) if A.size else float("nan")
        raise KernelFactorizationError(
            f"kernel matrix is not numerically positive definite (condition ~ {cond:.3g})") from exc


@dataclass(frozen=True)
class InterpolantModel:
    """f(x) = sum_j coefficients[j] K(x, centers[j]) with one center set for all outputs."""

    centers: np.ndarray          # (n, d)
    coefficients: np.ndarray     # (n, q)
    kernel: KernelConfig
    output_dim: int
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.centers.shape[0] != self.coefficients.shape[0]:
            raise ValueError("one coefficient row per center is required")
        if self.coefficients.shape[1] != self.output_dim:
            raise ValueError("coefficient columns must equal the output dimension")

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    def evaluate(self, x) -> np.ndarray:
        """Model values, shape (q,) for a single point and (m, q) for m points."""
        single = np.ndim(x) == 0 or (np.ndim(x) == 1 and self.input_dim > 1
                                     and np.shape(x)[0] == self.input_dim)
        X = _as_points(x).reshape(-1, self.input_dim)
        if self.n_centers == 0:
            out = np.zeros((X.shape[0], self.output_dim))
        else:
            out = kernel_matrix(X, self.centers, self.kernel) @ self.coefficients
        return out[0] if single else out

    def evaluate_derivative(self, x) -> np.ndarray:
        """d/dx of every output for 1-D inputs; shape (q,) or (m, q)."""
        if self.input_dim != 1:
            raise ValueError("derivative is provided for scalar inputs only")
        single = np.ndim(x) == 0
        X = _as_points(x)
        if self.n_centers == 0:
            out = np.zeros((X.shape[0], self.output_dim))
        else:
            out = kernel_gradient(X, self.centers, self.kernel)[:, :, 0] @ self.coefficients
        return out[0] if single else out

    # -- persistence ---------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kernel": {"family": self.kernel.family, "epsilon": self.kernel.epsilon,
                       "reg": self.kernel.reg, "smoothness": self.kernel.smoothness},
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
            "metadata": self.metadata,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> InterpolantModel:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"not a model file: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError("not a model file")
        if doc.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"model file version {doc.get('version')} not supported "
                                   f"(expected {MODEL_VERSION})")
        kc = KernelConfig(**doc["kernel"])
        d, q = int(doc["input_dim"]), int(doc["output_dim"])
        centers = np.array(doc["centers"], dtype=float).reshape(-1, d)
        coeffs = np.array(doc["coefficients"], dtype=float).reshape(-1, q)
        return cls(centers, coeffs, kc, q, doc.get("metadata", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> InterpolantModel:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def solve_regularized(A: np.ndarray, F: np.ndarray, reg: float):
    """Solve (A + reg I) alpha = F; on failure retry once with a trace-scaled shift.

    Returns (alpha, reg actually used).
    """
    n = A.shape[0]
    try:
        L = factorize(A + reg * np.eye(n))
    except KernelFactorizationError:
        bumped = max(reg, 1e-12 * float(np.trace(A)) / n)
        if bumped == reg:
            raise
        reg = bumped
        L = factorize(A + reg * np.eye(n))
    y = solve_triangular(L, F, lower=True)
    return solve_triangular(L.T, y, lower=False), reg


def fit_interpolant(X, F, kc: KernelConfig) -> InterpolantModel:
    """Dense regularized interpolant on all points of X."""
    X = _as_points(X)
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} points but {F.shape[0]} value rows")
    if X.shape[0] == 0:
        return InterpolantModel(X, np.zeros((0, F.shape[1])), kc, F.shape[1])
    alpha, reg = solve_regularized(kernel_matrix(X, X, kc), F, kc.reg)
    return InterpolantModel(X.copy(), alpha, kc.with_params(reg=reg), F.shape[1])


def native_norm_sq(model: InterpolantModel) -> float:
    """alpha^T A alpha summed over outputs."""
    A = kernel_matrix(model.centers, model.centers, model.kernel)
    return float(np.sum(model.coefficients * (A @ model.coefficients)))


def shape_grid(lo: float = 1e-2, hi: float = 50.0, n: int = 20) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def reg_grid(lo: float = 1e-16, hi: float = 1e-2, n: int = 15) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)
