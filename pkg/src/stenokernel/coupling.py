"""Lumped (0-D) models that close the 1-D vessels at their ends.

Each model receives the outgoing characteristic variable(s) extrapolated to the
new time level and returns the ingoing one(s):

* left-ventricle elastance model at the aortic inlet (flow boundary),
* bifurcations: mass conservation and continuity of total pressure,
* three-element Windkessel at terminal outlets,
* lumped stenosis ODE between the proximal and distal part of a vessel.

Pressures handed to the heart model are in mmHg (its parameters are given in
mmHg); everything else is CGS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from numba import njit

from .network import (FluidProperties, HeartParams, StenosisPlacement, VesselSegment,
                      WindkesselParams)
from .units import MMHG

K_T = 1.52
K_U = 1.2

LEFT, RIGHT_FLOW, RIGHT_WINDKESSEL = 0, 1, 2


class CouplingError(RuntimeError):
    """A boundary or junction solve failed to converge."""


# --------------------------------------------------------------------------
# scalar end solves (flow boundary at either end, Windkessel outlet)

@njit(cache=True)
def _end_residual(kind, x, w_known, target, A0, c0, G0, R1):
    if kind == LEFT:
        w1 = w_known
        w2 = x
    else:
        w1 = x
        w2 = w_known
    b = 1.0 + (w1 + w2) / (8.0 * c0)
    A = A0 * b * b * b * b
    c = c0 * b
    v = 0.5 * (w2 - w1)
    Q = A * v
    dA = A / (2.0 * c)
    if kind == LEFT:
        return Q - target, dA * v + 0.5 * A
    dQ = dA * v - 0.5 * A
    if kind == RIGHT_FLOW:
        return target - Q, -dQ
    p = G0 * (b * b - 1.0)
    dp = G0 * b / (4.0 * c0)
    return p - R1 * Q - target, dp - R1 * dQ


@njit(cache=True)
def _solve_end(kind, w_known, target, A0, c0, G0, R1, guess):
    """Safeguarded Newton for the unknown ingoing characteristic at one end.

    The bracket is the subcritical branch |v| < c, on which the residual is
    strictly increasing. Returns (x, status) with status 0 on success.
    """
    lo = (3.0 * w_known - 8.0 * c0) / 5.0
    hi = (8.0 * c0 + 5.0 * w_known) / 3.0
    span = hi - lo
    lo += 1e-9 * span
    hi -= 1e-9 * span
    flo, _ = _end_residual(kind, lo, w_known, target, A0, c0, G0, R1)
    fhi, _ = _end_residual(kind, hi, w_known, target, A0, c0, G0, R1)
    if flo > 0.0 or fhi < 0.0:
        return guess, 1
    x = guess
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    for _ in range(200):
        f, df = _end_residual(kind, x, w_known, target, A0, c0, G0, R1)
        if f == 0.0:
            return x, 0
        if f < 0.0:
            lo = x
        else:
            hi = x
        xn = x - f / df if df > 0.0 else 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-14 * (1.0 + abs(x)):
            return xn, 0
        x = xn
    return x, 2


# --------------------------------------------------------------------------
# bifurcation

@njit(cache=True)
def _branch(w1, w2, A0, c0, G0, rho):
    b = 1.0 + (w1 + w2) / (8.0 * c0)
    A = A0 * b * b * b * b
    c = c0 * b
    v = 0.5 * (w2 - w1)
    Q = A * v
    pt = 0.5 * rho * v * v + G0 * (b * b - 1.0)
    dA = A / (2.0 * c)
    dp = G0 * b / (4.0 * c0)
    return b, Q, pt, dA * v, 0.5 * A, rho * v * 0.5, dp


@njit(cache=True)
def _bifurcation(w2p, w1a, w1b, A0p, c0p, G0p, A0a, c0a, G0a, A0b, c0b, G0b, rho,
                 x0, x1, x2):
    """Newton solve for (W1 parent, W2 child a, W2 child b); returns (x0, x1, x2, status)."""
    for _ in range(50):
        bp, Qp, ptp, qa_p, qb_p, pv_p, dp_p = _branch(x0, w2p, A0p, c0p, G0p, rho)
        ba, Qa, pta, qa_a, qb_a, pv_a, dp_a = _branch(w1a, x1, A0a, c0a, G0a, rho)
        bb, Qb, ptb, qa_b, qb_b, pv_b, dp_b = _branch(w1b, x2, A0b, c0b, G0b, rho)
        F0 = Qp - Qa - Qb
        F1 = ptp - pta
        F2 = ptp - ptb
        dQp = qa_p - qb_p        # parent flow w.r.t. its W1
        dQa = qa_a + qb_a        # child flow w.r.t. its W2
        dQb = qa_b + qb_b
        dptp = -pv_p + dp_p
        dpta = pv_a + dp_a
        dptb = pv_b + dp_b
        den = dQp - dQa * dptp / dpta - dQb * dptp / dptb
        d0 = (-F0 + dQa * F1 / dpta + dQb * F2 / dptb) / den
        d1 = (F1 + dptp * d0) / dpta
        d2 = (F2 + dptp * d0) / dptb
        step = 1.0
        for _ in range(30):
            n0 = x0 + step * d0
            n1 = x1 + step * d1
            n2 = x2 + step * d2
            if (1.0 + (n0 + w2p) / (8.0 * c0p) > 0.0 and 1.0 + (w1a + n1) / (8.0 * c0a) > 0.0
                    and 1.0 + (w1b + n2) / (8.0 * c0b) > 0.0):
                break
            step *= 0.5
        x0, x1, x2 = n0, n1, n2
        if max(abs(d0), abs(d1), abs(d2)) * step <= 1e-11 * (1.0 + abs(x0) + abs(x1) + abs(x2)):
            return x0, x1, x2, 0
    return x0, x1, x2, 1


def bifurcation_residuals(w1p, w2p, w1a, w2a, w1b, w2b, segs, fluid):
    """Mass and total-pressure mismatches (Qp - Qa - Qb, pt_p - pt_a, pt_p - pt_b) and scales."""
    rho = fluid.density
    out = []
    for (w1, w2), seg in zip(((w1p, w2p), (w1a, w2a), (w1b, w2b)), segs):
        c0 = math.sqrt(seg.stiffness / (2.0 * rho))
        _, Q, pt, *_ = _branch(w1, w2, seg.rest_area, c0, seg.stiffness, rho)
        out.append((Q, pt))
    (Qp, ptp), (Qa, pta), (Qb, ptb) = out
    return (Qp - Qa - Qb, ptp - pta, ptp - ptb), (Qp, ptp)


def bifurcation_solve(w2_parent, w1_child_a, w1_child_b, segs, fluid: FluidProperties,
                      guess=(0.0, 0.0, 0.0), label=""):
    """Ingoing characteristics (W1 parent, W2 child a, W2 child b) at a bifurcation."""
    p, a, b = segs
    rho = fluid.density
    c = [math.sqrt(s.stiffness / (2.0 * rho)) for s in segs]
    x0, x1, x2, status = _bifurcation(w2_parent, w1_child_a, w1_child_b,
                                      p.rest_area, c[0], p.stiffness,
                                      a.rest_area, c[1], a.stiffness,
                                      b.rest_area, c[2], b.stiffness, rho, *guess)
    if status:
        res, _ = bifurcation_residuals(x0, w2_parent, w1_child_a, x1, w1_child_b, x2, segs, fluid)
        raise CouplingError(f"bifurcation {label or (p.id, a.id, b.id)}: Newton did not converge, "
                            f"residual {res}")
    return x0, x1, x2


# --------------------------------------------------------------------------
# flow boundary and Windkessel

def _c0(seg, fluid):
    return math.sqrt(seg.stiffness / (2.0 * fluid.density))


def flow_boundary(w_out, Q, seg: VesselSegment, fluid: FluidProperties, end="left", guess=None):
    """Ingoing characteristic at one end of `seg` so that the flow there equals Q."""
    kind = LEFT if end == "left" else RIGHT_FLOW
    g = w_out if guess is None else guess
    x, status = _solve_end(kind, w_out, Q, seg.rest_area, _c0(seg, fluid), seg.stiffness, 0.0, g)
    if status:
        raise CouplingError(f"segment {seg.id} {end} end: no subcritical state carries Q={Q:g}")
    return x


def windkessel_capacitor(p_prev, Q_prev, dt, wp: WindkesselParams):
    """Explicit update of the capacitor pressure p_c = p - R1*Q of the Windkessel."""
    pc = p_prev - wp.R1 * Q_prev
    return pc + dt / wp.C * (Q_prev - (pc - wp.venous_pressure) / wp.R2)


def windkessel_solve(w2_out, p_prev, Q_prev, dt, wp: WindkesselParams, seg: VesselSegment,
                     fluid: FluidProperties, guess=None):
    """Ingoing W1 at a terminal outlet.

    The ODE p + R2 C dp/dt = p_v + (R1+R2) Q + R1 R2 C dQ/dt is advanced
    explicitly through its capacitor pressure; the new outlet state must then
    satisfy p(A) - R1 Q = p_c, a scalar equation in W1.
    """
    pc = windkessel_capacitor(p_prev, Q_prev, dt, wp)
    g = w2_out if guess is None else guess
    x, status = _solve_end(RIGHT_WINDKESSEL, w2_out, pc, seg.rest_area, _c0(seg, fluid),
                           seg.stiffness, wp.R1, g)
    if status:
        raise CouplingError(f"terminal at segment {seg.id}: Windkessel solve failed")
    return x


# --------------------------------------------------------------------------
# heart

def elastance(t: float, hp: HeartParams) -> float:
    """Time-varying elastance E(t) = E_max*e_v(t mod T) + E_min in mmHg/cm^3."""
    tm = t - hp.T * math.floor(t / hp.T + 1e-12)
    tm = max(tm, 0.0)
    if tm <= hp.T_vcp:
        ev = 0.5 * (1.0 - math.cos(math.pi * tm / hp.T_vcp))
    elif tm <= hp.T_vcp + hp.T_vrp:
        ev = 0.5 * (1.0 + math.cos(math.pi * (tm - hp.T_vcp) / hp.T_vrp))
    else:
        ev = 0.0
    return hp.E_max * ev + hp.E_min


def ventricle_pressure(E: float, V: float, Q: float, hp: HeartParams) -> float:
    """P_LV from P = E (V - V0) + S dV/dt with S = S_coeff * P and dV/dt = -Q, in mmHg.

    The wall viscosity term opposes ejection, so P = E (V - V0) / (1 + S_coeff Q).
    """
    den = 1.0 + hp.S_coeff * Q
    if den <= 0.0:
        raise CouplingError(f"ventricle pressure undefined for Q_LV={Q:g}")
    return E * (V - hp.V0) / den


@dataclass(frozen=True)
class HeartState:
    V: float
    Q_LV: float = 0.0
    P_LV: float = 0.0
    systole: bool = False

    @classmethod
    def initial(cls, hp: HeartParams) -> HeartState:
        return cls(hp.V_max, 0.0, ventricle_pressure(hp.E_min, hp.V_max, 0.0, hp), False)


def heart_advance(hs: HeartState, p_root: float, t: float, dt: float, hp: HeartParams) -> HeartState:
    """One explicit step of the ventricle/valve model from t to t + dt.

    `p_root` is the aortic root pressure at time t in dyn/cm^2.
    """
    P = ventricle_pressure(elastance(t, hp), hs.V, hs.Q_LV, hp)
    dP = P - p_root / MMHG
    if dP > 0.0:
        Q = hs.Q_LV + dt / hp.L * (dP - hp.R * hs.Q_LV - hp.B * hs.Q_LV * abs(hs.Q_LV))
        Q = max(Q, 0.0)
        systole = True
    else:
        Q = 0.0
        systole = False
    V = hs.V - dt * hs.Q_LV
    t_new = t + dt
    if math.floor(t_new / hp.T + 1e-9) > math.floor(t / hp.T + 1e-9):
        V = hp.V_max
    if not math.isfinite(Q) or not math.isfinite(V):
        raise CouplingError(f"heart model blew up at t={t:g}")
    return HeartState(V, Q, ventricle_pressure(elastance(t_new, hp), V, Q, hp), systole)


def heart_step(hs: HeartState, p_root: float, t: float, dt: float, hp: HeartParams,
               w1_out: float, seg: VesselSegment, fluid: FluidProperties, guess=None):
    """Advance the heart and return (new state, ingoing W2 at the aortic inlet)."""
    new = heart_advance(hs, p_root, t, dt, hp)
    return new, flow_boundary(w1_out, new.Q_LV, seg, fluid, "left", guess)


# --------------------------------------------------------------------------
# stenosis

@dataclass(frozen=True)
class StenosisModel:
    """Derived coefficients of the lumped stenosis for one degree R_s."""

    placement: StenosisPlacement
    fluid: FluidProperties

    @property
    def degree(self) -> float:
        return self.placement.degree

    @property
    def occluded(self) -> bool:
        return self.placement.degree >= 1.0

    @property
    def area(self) -> float:
        return (1.0 - self.placement.degree) * self.placement.rest_area

    @property
    def diameter(self) -> float:
        return 2.0 * math.sqrt(self.area / math.pi)

    @property
    def K_v(self) -> float:
        if self.occluded:
            return math.inf
        pl, D = self.placement, self.diameter
        return 32.0 * (0.83 * pl.length + 1.64 * D) * (pl.rest_area / self.area) ** 2 / D

    @property
    def inertance(self) -> float:
        return K_U * self.fluid.density * self.placement.length / self.placement.rest_area

    @property
    def linear_resistance(self) -> float:
        pl = self.placement
        return self.K_v * self.fluid.viscosity * pl.length / (pl.rest_area * self.diameter)

    @property
    def quadratic_resistance(self) -> float:
        pl = self.placement
        return K_T * self.fluid.density / (2.0 * pl.rest_area ** 2) * (pl.rest_area / self.area - 1.0) ** 2

    def rate(self, Q: float, dp: float) -> float:
        """dQ_s/dt for a driving pressure dp = p_proximal - p_distal."""
        return (dp - self.linear_resistance * Q - self.quadratic_resistance * Q * abs(Q)) / self.inertance


@njit(cache=True)
def _stenosis(w2p, w1d, Qn, dt, inert, rv, rt, A0, c0, G0, x0, x1, x2):
    """Backward-Euler stenosis flow coupled with both adjacent vessel ends.

    Unknowns: x0 = W1 at the proximal outlet, x1 = W2 at the distal inlet, x2 = Q_s.
    """
    a = dt / inert
    for _ in range(50):
        bp = 1.0 + (x0 + w2p) / (8.0 * c0)
        bd = 1.0 + (w1d + x1) / (8.0 * c0)
        Ap = A0 * bp ** 4
        Ad = A0 * bd ** 4
        vp = 0.5 * (w2p - x0)
        vd = 0.5 * (x1 - w1d)
        Qp = Ap * vp
        Qd = Ad * vd
        pp = G0 * (bp * bp - 1.0)
        pd = G0 * (bd * bd - 1.0)
        F0 = Qp - x2
        F1 = Qd - x2
        F2 = x2 - Qn - a * (pp - pd - rv * x2 - rt * x2 * abs(x2))
        dQp = Ap / (2.0 * c0 * bp) * vp - 0.5 * Ap
        dQd = Ad / (2.0 * c0 * bd) * vd + 0.5 * Ad
        dpp = G0 * bp / (4.0 * c0)
        dpd = G0 * bd / (4.0 * c0)
        D = 1.0 + a * (rv + 2.0 * rt * abs(x2))
        den = D - a * dpp / dQp + a * dpd / dQd
        d2 = (-F2 - a * dpp * F0 / dQp + a * dpd * F1 / dQd) / den
        d0 = (-F0 + d2) / dQp
        d1 = (-F1 + d2) / dQd
        step = 1.0
        for _ in range(30):
            if (1.0 + (x0 + step * d0 + w2p) / (8.0 * c0) > 0.0
                    and 1.0 + (w1d + x1 + step * d1) / (8.0 * c0) > 0.0):
                break
            step *= 0.5
        x0 += step * d0
        x1 += step * d1
        x2 += step * d2
        # quadratic convergence: a step this small leaves an error far below it
        if max(abs(d0), abs(d1)) * step <= 1e-10 * (1.0 + abs(x0) + abs(x1)) and \
                abs(d2) * step <= 1e-10 * (1.0 + abs(x2)):
            return x0, x1, x2, 0
    return x0, x1, x2, 1


def stenosis_step(Q_s: float, w2_prox: float, w1_dist: float, dt: float, model: StenosisModel,
                  seg: VesselSegment, guess=None):
    """Advance the stenosis flow and return (Q_s new, ingoing W1 proximal, ingoing W2 distal).

    Proximal and distal parts share rest area and stiffness, so one segment
    description serves both ends. A fully occluded vessel reflects both waves.
    """
    if model.occluded:
        return 0.0, w2_prox, w1_dist
    c0 = _c0(seg, model.fluid)
    g = (w2_prox, w1_dist, Q_s) if guess is None else guess
    x0, x1, x2, status = _stenosis(w2_prox, w1_dist, Q_s, dt, model.inertance,
                                   model.linear_resistance, model.quadratic_resistance,
                                   seg.rest_area, c0, seg.stiffness, *g)
    if status or not math.isfinite(x2):
        raise CouplingError(f"stenosis (R_s={model.degree:g}): flow update failed, Q_s={x2!r}")
    return x2, x0, x1


def stenosis_flow_update(Q: float, dp: float, dt: float, model: StenosisModel) -> float:
    """Backward-Euler update of the stenosis ODE for a given driving pressure."""
    if model.occluded:
        return 0.0
    I, rv, rt = model.inertance, model.linear_resistance, model.quadratic_resistance
    # rt*|x|*x + (I/dt + rv)*x - (I/dt*Q + dp) = 0, monotone in x
    a, rhs = I / dt + rv, I / dt * Q + dp
    if rt == 0.0:
        return rhs / a
    s = 1.0 if rhs >= 0 else -1.0
    r = abs(rhs)
    return s * 2.0 * r / (a + math.sqrt(a * a + 4.0 * rt * r))
