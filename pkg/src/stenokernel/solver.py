"""Numerical method of characteristics on a network of 1-D vessels.

Each segment stores its characteristic variables W1, W2 on the node grid. One
time step proceeds in three stages:

1. the outgoing characteristic at both ends of every segment is extrapolated
   to t_{n+1} (feet inside the segment),
2. every 0-D model at the segment ends turns those into ingoing values,
3. all nodes are updated; feet that leave the segment pick up the boundary
   value linearly interpolated in time between t_n and t_{n+1}.

The friction source is applied explicitly along each characteristic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .characteristics import (SUPERCRITICAL_RATIO, CharacteristicPair, CollapsedVesselError,
                              FlowError, SupercriticalFlowError, _foot, _interp, _source,
                              from_characteristics, to_characteristics)
from .coupling import (HeartState, StenosisModel, bifurcation_residuals, bifurcation_solve,
                       heart_step, stenosis_step, windkessel_solve)
from .network import FluidProperties, NetworkTopology, VesselSegment

OK, COLLAPSED, SUPERCRITICAL = 0, 1, 2


@njit(cache=True)
def _outgoing(W1, W2, dz, length, A0, c0, kr, dt):
    """Outgoing values at t_{n+1}: W1 at the inlet node, W2 at the outlet node."""
    last = W1.shape[0] - 1
    g = _foot(W1, W2, 0, 1, dz, length, c0, dt)
    a1 = _interp(W1, g, dz, length)
    a2 = _interp(W2, g, dz, length)
    s1, _ = _source(a1, a2, A0, c0, kr)
    w1 = a1 + dt * s1
    g = _foot(W1, W2, last, 2, dz, length, c0, dt)
    a1 = _interp(W1, g, dz, length)
    a2 = _interp(W2, g, dz, length)
    _, s2 = _source(a1, a2, A0, c0, kr)
    w2 = a2 + dt * s2
    return w1, w2


@njit(cache=True)
def _advance(W1, W2, W1n, W2n, dz, length, A0, c0, kr, dt,
             w1_left, w2_left, w1_right, w2_right):
    """Update all nodes into (W1n, W2n); returns (status, node)."""
    last = W1.shape[0] - 1
    for k in range(1, last):
        z = k * dz
        g = _foot(W1, W2, k, 1, dz, length, c0, dt)
        if g <= length:
            a1 = _interp(W1, g, dz, length)
            a2 = _interp(W2, g, dz, length)
            tau = dt
        else:
            s = (length - g) / (z - g)
            a1 = (1.0 - s) * W1[last] + s * w1_right
            a2 = (1.0 - s) * W2[last] + s * w2_right
            tau = (1.0 - s) * dt
        s1, _ = _source(a1, a2, A0, c0, kr)
        W1n[k] = a1 + tau * s1

        g = _foot(W1, W2, k, 2, dz, length, c0, dt)
        if g >= 0.0:
            a1 = _interp(W1, g, dz, length)
            a2 = _interp(W2, g, dz, length)
            tau = dt
        else:
            s = (0.0 - g) / (z - g)
            a1 = (1.0 - s) * W1[0] + s * w1_left
            a2 = (1.0 - s) * W2[0] + s * w2_left
            tau = (1.0 - s) * dt
        _, s2 = _source(a1, a2, A0, c0, kr)
        W2n[k] = a2 + tau * s2
    W1n[0] = w1_left
    W2n[0] = w2_left
    W1n[last] = w1_right
    W2n[last] = w2_right
    for k in range(last + 1):
        b = 1.0 + (W1n[k] + W2n[k]) / (8.0 * c0)
        if not b > 0.0:
            return COLLAPSED, k
        v = 0.5 * (W2n[k] - W1n[k])
        if not abs(v) < SUPERCRITICAL_RATIO * c0 * b:
            return SUPERCRITICAL, k
    return OK, -1


def _raise_status(status, node, seg_id, t):
    where = f"segment {seg_id}, node {node}, t={t:.6g} s"
    if status == COLLAPSED:
        raise CollapsedVesselError(f"vessel collapsed at {where}")
    raise SupercriticalFlowError(f"supercritical flow at {where}")


# --------------------------------------------------------------------------
# single-segment interface

def outgoing_characteristics(W, seg: VesselSegment, fluid: FluidProperties, dt: float):
    """(W1 at z=0, W2 at z=l) extrapolated to t + dt from inside the segment."""
    W1 = np.ascontiguousarray(W[0], dtype=float)
    W2 = np.ascontiguousarray(W[1], dtype=float)
    return _outgoing(W1, W2, seg.dz, seg.length, seg.rest_area, seg.rest_wave_speed(fluid),
                     fluid.friction, dt)


def nmc_step(W, seg: VesselSegment, fluid: FluidProperties, dt: float,
             w2_left_in: float, w1_right_in: float, outgoing=None, t: float = 0.0):
    """Advance one segment given the ingoing characteristics at t + dt.

    `outgoing` may carry the values returned by `outgoing_characteristics`
    (they are recomputed otherwise). Returns the new CharacteristicPair.
    """
    W1 = np.ascontiguousarray(W[0], dtype=float)
    W2 = np.ascontiguousarray(W[1], dtype=float)
    if outgoing is None:
        outgoing = outgoing_characteristics((W1, W2), seg, fluid, dt)
    W1n, W2n = np.empty_like(W1), np.empty_like(W2)
    status, node = _advance(W1, W2, W1n, W2n, seg.dz, seg.length, seg.rest_area,
                            seg.rest_wave_speed(fluid), fluid.friction, dt,
                            outgoing[0], w2_left_in, w1_right_in, outgoing[1])
    if status:
        _raise_status(status, node, seg.id, t + dt)
    return CharacteristicPair(W1n, W2n)


# --------------------------------------------------------------------------
# network simulation

@dataclass
class FlowState:
    """Section areas and flow rates per segment at time t."""

    t: float
    A: dict[int, np.ndarray] = field(default_factory=dict)
    Q: dict[int, np.ndarray] = field(default_factory=dict)


def _end_values(w1, w2, seg, c0):
    b = 1.0 + (w1 + w2) / (8.0 * c0)
    A = seg.rest_area * b ** 4
    return seg.stiffness * (b * b - 1.0), A * 0.5 * (w2 - w1)


class Simulation:
    """Time integration of a whole network with all its 0-D couplings.

    Time is tracked as an integer step count so that recording instants and
    beat boundaries are exact multiples of dt.
    """

    def __init__(self, network: NetworkTopology, dt: float = 2.5e-3, check_junctions: bool = False):
        if not dt > 0:
            raise ValueError("time step must be positive")
        self.network = network
        self.fluid = network.fluid
        self.dt = float(dt)
        self.segments = list(network.segments)
        self._c0 = {s.id: s.rest_wave_speed(self.fluid) for s in self.segments}
        self.W1 = {s.id: np.zeros(s.node_count) for s in self.segments}
        self.W2 = {s.id: np.zeros(s.node_count) for s in self.segments}
        self.step_index = 0
        self.heart = HeartState.initial(network.heart)
        self.Q_s = 0.0
        self.stenosis = None
        if network.stenosis is not None:
            self.stenosis = StenosisModel(network.stenosis, self.fluid)
        self.check_junctions = check_junctions
        self.max_mass_residual = 0.0
        self.max_pressure_residual = 0.0

    # -- state access ------------------------------------------------------

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    def set_stenosis_degree(self, degree: float) -> None:
        self.network = self.network.with_stenosis_degree(degree)
        self.stenosis = StenosisModel(self.network.stenosis, self.fluid)

    def state(self) -> FlowState:
        st = FlowState(self.t)
        for s in self.segments:
            A, Q = from_characteristics((self.W1[s.id], self.W2[s.id]), s, self.fluid)
            st.A[s.id], st.Q[s.id] = np.asarray(A), np.asarray(Q)
        return st

    def set_state(self, state: FlowState) -> None:
        for s in self.segments:
            W = to_characteristics(state.A[s.id], state.Q[s.id], s, self.fluid)
            self.W1[s.id] = np.array(W.W1, dtype=float)
            self.W2[s.id] = np.array(W.W2, dtype=float)

    def node_values(self, sid: int, node: int) -> tuple[float, float]:
        """(pressure in dyn/cm^2, flow rate in cm^3/s) at one node."""
        seg = self.network.segment(sid)
        return _end_values(self.W1[sid][node], self.W2[sid][node], seg, self._c0[sid])

    def monitor_values(self) -> dict[str, tuple[float, float]]:
        return {m.name: self.node_values(m.segment, m.node) for m in self.network.monitors}

    def snapshot(self) -> dict[str, np.ndarray]:
        """Complete solver state as plain arrays (for caching)."""
        out = {"step_index": np.array(self.step_index), "dt": np.array(self.dt),
               "heart": np.array([self.heart.V, self.heart.Q_LV, self.heart.P_LV,
                                  float(self.heart.systole)]),
               "Q_s": np.array(self.Q_s)}
        for s in self.segments:
            out[f"W1_{s.id}"] = self.W1[s.id].copy()
            out[f"W2_{s.id}"] = self.W2[s.id].copy()
        return out

    def restore(self, snap) -> None:
        if float(snap["dt"]) != self.dt:
            raise ValueError("snapshot was taken with a different time step")
        self.step_index = int(snap["step_index"])
        V, Q, P, sy = (float(x) for x in snap["heart"])
        self.heart = HeartState(V, Q, P, bool(sy))
        self.Q_s = float(snap["Q_s"])
        for s in self.segments:
            W1, W2 = np.array(snap[f"W1_{s.id}"], float), np.array(snap[f"W2_{s.id}"], float)
            if W1.shape != (s.node_count,):
                raise ValueError(f"snapshot grid mismatch for segment {s.id}")
            self.W1[s.id], self.W2[s.id] = W1, W2

    # -- stepping ----------------------------------------------------------

    def step(self) -> None:
        net, fluid, dt, t = self.network, self.fluid, self.dt, self.t
        kr = fluid.friction
        out = {}
        for s in self.segments:
            out[s.id] = _outgoing(self.W1[s.id], self.W2[s.id], s.dz, s.length, s.rest_area,
                                  self._c0[s.id], kr, dt)
        left_in, right_in = {}, {}

        inlet = net.segment(net.inlet)
        p_root, _ = _end_values(self.W1[inlet.id][0], self.W2[inlet.id][0], inlet, self._c0[inlet.id])
        self.heart, left_in[inlet.id] = heart_step(self.heart, p_root, t, dt, net.heart,
                                                   out[inlet.id][0], inlet, fluid,
                                                   guess=self.W2[inlet.id][0])

        for j in net.junctions:
            p, (a, b) = j.parent, j.children
            segs = (net.segment(p), net.segment(a), net.segment(b))
            guess = (self.W1[p][-1], self.W2[a][0], self.W2[b][0])
            right_in[p], left_in[a], left_in[b] = bifurcation_solve(
                out[p][1], out[a][0], out[b][0], segs, fluid, guess, label=f"{p}->{a},{b}")

        for term in net.terminals:
            sid = term.segment
            seg = net.segment(sid)
            p_prev, Q_prev = _end_values(self.W1[sid][-1], self.W2[sid][-1], seg, self._c0[sid])
            right_in[sid] = windkessel_solve(out[sid][1], p_prev, Q_prev, dt, term.windkessel, seg,
                                             fluid, guess=self.W1[sid][-1])

        if net.stenosis is not None:
            pr, di = net.stenosis.proximal, net.stenosis.distal
            guess = (self.W1[pr][-1], self.W2[di][0], self.Q_s)
            self.Q_s, right_in[pr], left_in[di] = stenosis_step(
                self.Q_s, out[pr][1], out[di][0], dt, self.stenosis, net.segment(pr), guess)

        for s in self.segments:
            W1n, W2n = np.empty(s.node_count), np.empty(s.node_count)
            status, node = _advance(self.W1[s.id], self.W2[s.id], W1n, W2n, s.dz, s.length,
                                    s.rest_area, self._c0[s.id], kr, dt,
                                    out[s.id][0], left_in[s.id], right_in[s.id], out[s.id][1])
            if status:
                _raise_status(status, node, s.id, t + dt)
            self.W1[s.id], self.W2[s.id] = W1n, W2n
        self.step_index += 1

        if self.check_junctions:
            self._record_junction_residuals()

    def _record_junction_residuals(self) -> None:
        net = self.network
        for j in net.junctions:
            p, (a, b) = j.parent, j.children
            segs = (net.segment(p), net.segment(a), net.segment(b))
            (dm, dp1, dp2), (Qp, ptp) = bifurcation_residuals(
                self.W1[p][-1], self.W2[p][-1], self.W1[a][0], self.W2[a][0],
                self.W1[b][0], self.W2[b][0], segs, self.fluid)
            self.max_mass_residual = max(self.max_mass_residual, abs(dm) / max(1.0, abs(Qp)))
            self.max_pressure_residual = max(self.max_pressure_residual,
                                             max(abs(dp1), abs(dp2)) / max(1.0, abs(ptp)))

    def run_steps(self, n: int, callback=None) -> None:
        """Advance n steps; `callback(sim)` is called after every step."""
        for _ in range(n):
            self.step()
            if callback is not None:
                callback(self)

    def steps_until(self, t_end: float) -> int:
        n = t_end / self.dt - self.step_index
        k = round(n)
        if abs(n - k) > 1e-6:
            raise ValueError(f"t={t_end} is not a multiple of dt={self.dt}")
        return max(k, 0)

    def run(self, t_end: float, callback=None) -> None:
        self.run_steps(self.steps_until(t_end), callback)


def classical_cfl_step(sim: Simulation) -> float:
    """min over segments of dz / max|lambda| for the current state."""
    best = math.inf
    for s in sim.segments:
        W1, W2 = sim.W1[s.id], sim.W2[s.id]
        c0 = sim._c0[s.id]
        c = c0 + 0.125 * (W1 + W2)
        v = 0.5 * (W2 - W1)
        best = min(best, s.dz / float(np.max(np.abs(v) + c)))
    return best


__all__ = ["FlowState", "Simulation", "nmc_step", "outgoing_characteristics", "classical_cfl_step",
           "FlowError"]
