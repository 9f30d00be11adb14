"""Characteristic form of the 1-D blood flow equations.

With v = Q/A and the wave speed c(A) = c0 * (A/A0)**(1/4), c0 = sqrt(G0/(2 rho)),
the characteristic variables are

    W1 = -v + 4 (c(A) - c0)      (travels backward, speed v - c)
    W2 =  v + 4 (c(A) - c0)      (travels forward,  speed v + c)

so c = c0 + (W1 + W2)/8 and v = (W2 - W1)/2, which is what the kernels below
exploit. The underscore functions are numba-compiled and shared with the
network solver; the public functions validate input and accept arrays.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

from .network import FluidProperties, VesselSegment

SUPERCRITICAL_RATIO = 0.99


class FlowError(RuntimeError):
    """Numerical failure of the flow solver (collapse or supercritical flow)."""


class CollapsedVesselError(FlowError):
    pass


class SupercriticalFlowError(FlowError):
    pass


class CharacteristicPair(NamedTuple):
    W1: float | np.ndarray
    W2: float | np.ndarray


@njit(cache=True)
def _area(w1, w2, A0, c0):
    b = 1.0 + (w1 + w2) / (8.0 * c0)
    return A0 * b * b * b * b


@njit(cache=True)
def _pressure(w1, w2, G0, c0):
    b = 1.0 + (w1 + w2) / (8.0 * c0)
    return G0 * (b * b - 1.0)


@njit(cache=True)
def _interp(arr, x, dz, length):
    last = arr.shape[0] - 1
    if x <= 0.0:
        return arr[0]
    if x >= length:
        return arr[last]
    s = x / dz
    i = int(s)
    if i >= last:
        i = last - 1
    th = s - i
    return (1.0 - th) * arr[i] + th * arr[i + 1]


@njit(cache=True)
def _foot(W1, W2, k, family, dz, length, c0, dt):
    """Foot of the family-1 or family-2 characteristic through node k at t_{n+1}.

    One fixed-point sweep: speed first taken at the node, then re-evaluated at
    the interpolated foot.
    """
    last = W1.shape[0] - 1
    z = length if k == last else k * dz
    w1 = W1[k]
    w2 = W2[k]
    v = 0.5 * (w2 - w1)
    c = c0 + 0.125 * (w1 + w2)
    lam = v - c if family == 1 else v + c
    g = z - dt * lam
    w1 = _interp(W1, g, dz, length)
    w2 = _interp(W2, g, dz, length)
    v = 0.5 * (w2 - w1)
    c = c0 + 0.125 * (w1 + w2)
    lam = v - c if family == 1 else v + c
    return z - dt * lam


@njit(cache=True)
def _source(w1, w2, A0, c0, kr):
    """Friction term L*S in characteristic space; returns (s1, s2) with s2 = -s1."""
    A = _area(w1, w2, A0, c0)
    s = kr * 0.5 * (w2 - w1) / A
    return s, -s


# --------------------------------------------------------------------------
# public, array-friendly versions

def _rest_speed(seg: VesselSegment, fluid: FluidProperties) -> float:
    return math.sqrt(seg.stiffness / (2.0 * fluid.density))


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def wave_speed(A, seg: VesselSegment, fluid: FluidProperties):
    """Pulse wave speed sqrt(G0/(2 rho) * sqrt(A/A0)) in cm/s."""
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0):
        raise CollapsedVesselError("section area must be positive")
    return _scalar_or_array(_rest_speed(seg, fluid) * (A / seg.rest_area) ** 0.25)


def eigenvalues(A, Q, seg: VesselSegment, fluid: FluidProperties):
    """Characteristic speeds (v - c, v + c); rejects (near-)supercritical states."""
    c = np.asarray(wave_speed(A, seg, fluid))
    v = np.asarray(Q, dtype=float) / np.asarray(A, dtype=float)
    if np.any(np.abs(v) >= SUPERCRITICAL_RATIO * c):
        raise SupercriticalFlowError("flow velocity reaches the wave speed")
    return _scalar_or_array(v - c), _scalar_or_array(v + c)


def to_characteristics(A, Q, seg: VesselSegment, fluid: FluidProperties) -> CharacteristicPair:
    c = np.asarray(wave_speed(A, seg, fluid))
    v = np.asarray(Q, dtype=float) / np.asarray(A, dtype=float)
    dc = 4.0 * (c - _rest_speed(seg, fluid))
    return CharacteristicPair(_scalar_or_array(-v + dc), _scalar_or_array(v + dc))


def from_characteristics(W, seg: VesselSegment, fluid: FluidProperties):
    """Recover (A, Q) from characteristic variables."""
    w1 = np.asarray(W[0], dtype=float)
    w2 = np.asarray(W[1], dtype=float)
    c0 = _rest_speed(seg, fluid)
    base = 1.0 + (w1 + w2) / (8.0 * c0)
    if np.any(base <= 0):
        raise CollapsedVesselError("characteristic values imply a collapsed vessel")
    A = seg.rest_area * base ** 4
    Q = A * 0.5 * (w2 - w1)
    return _scalar_or_array(A), _scalar_or_array(Q)


def source_term(W, seg: VesselSegment, fluid: FluidProperties) -> CharacteristicPair:
    """Friction source mapped to characteristic space, (Kr v/A, -Kr v/A)."""
    A, Q = from_characteristics(W, seg, fluid)
    s = fluid.friction * np.asarray(Q) / np.asarray(A) ** 2
    return CharacteristicPair(_scalar_or_array(s), _scalar_or_array(-s))


def trace_feet(k: int, A, Q, seg: VesselSegment, fluid: FluidProperties, dt: float):
    """Feet (g1, g2) at t_n of the two characteristics reaching node k at t_n + dt.

    Feet outside [0, l] are returned as is; the solver handles them by temporal
    interpolation of the boundary values.
    """
    W1, W2 = to_characteristics(np.asarray(A, float), np.asarray(Q, float), seg, fluid)
    c0 = _rest_speed(seg, fluid)
    g1 = _foot(W1, W2, k, 1, seg.dz, seg.length, c0, dt)
    g2 = _foot(W1, W2, k, 2, seg.dz, seg.length, c0, dt)
    return g1, g2
