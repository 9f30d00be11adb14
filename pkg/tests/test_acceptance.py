"""Acceptance suite; the terminal summary prints one PASS/FAIL line per criterion.

Datasets come from the on-disk simulation cache (default ~/.cache/stenokernel or
$STENOKERNEL_CACHE_DIR); on a cold cache the snapshot runs take roughly 15 minutes.
"""
import json
import math
import time

import numpy as np
import pytest

from stenokernel.characteristics import from_characteristics
from stenokernel.cli import main
from stenokernel.coupling import StenosisModel
from stenokernel.estimation import estimate, make_measurement
from stenokernel.kernels import InterpolantModel, KernelConfig, fit_interpolant
from stenokernel.network import FluidProperties
from stenokernel.pipeline import (SnapshotProtocol, build_dataset, default_cache_dir,
                                  equispaced_degrees, evaluate_models, pulsatility_index,
                                  run_full_model, time_evaluation, time_full_model, train_all,
                                  warmup_state)
from stenokernel.solver import Simulation, classical_cfl_step
from stenokernel.vkoga import CvSpec, vkoga_fit

from conftest import make_segment, march

SIZES = (5, 10, 20, 40, 80, 160)
PROTOCOL = SnapshotProtocol()
CACHE = default_cache_dir()


def criterion(number, title):
    return pytest.mark.criterion(number, title)


@pytest.fixture(scope="session")
def warm(desk):
    return warmup_state(desk, PROTOCOL, CACHE)


@pytest.fixture(scope="session")
def datasets(desk, warm):
    return {n: build_dataset(desk, equispaced_degrees(n), PROTOCOL, cache_dir=CACHE)
            for n in (*SIZES, 1000)}


@pytest.fixture(scope="session")
def pressure_models(datasets):
    return {n: train_all(datasets[n], CvSpec(folds=min(10, n)), ["p56"])["p56"].model for n in SIZES}


@pytest.fixture(scope="session")
def flow_model(datasets):
    return train_all(datasets[160], CvSpec(), ["f56"])["f56"].model


# --------------------------------------------------------------------------

@criterion(1, "rest state is a fixed point of the solver")
def test_c01_rest_fixed_point(record_property):
    fluid = FluidProperties(1.06, 0.0)
    s = make_segment()
    zero = np.zeros(s.node_count)
    t0 = time.perf_counter()
    W1, W2 = march((zero, zero), s, fluid, 1e-4, 10_000)
    elapsed = time.perf_counter() - t0
    A, Q = from_characteristics((W1, W2), s, fluid)
    dev = max(np.max(np.abs(A - s.rest_area)), np.max(np.abs(Q)))
    record_property("max_dev", f"{dev:.1e}")
    record_property("runtime_s", f"{elapsed:.2f}")
    assert dev <= 1e-12 and elapsed < 10.0


def _peak_time(times, values):
    i = int(np.argmax(values))
    y0, y1, y2 = values[i - 1:i + 2]
    return times[i] + 0.5 * (times[1] - times[0]) * (y0 - y2) / (y0 - 2 * y1 + y2)


@criterion(2, "small pulse travels at sqrt(G0 / (2 rho))")
def test_c02_wave_speed(record_property):
    fluid = FluidProperties(1.06, 0.0)
    s = make_segment(length=30.0, c0=500.0, dz=0.05)
    c0 = math.sqrt(s.stiffness / (2 * fluid.density))
    k5, k15 = round(5 / s.dz), round(15 / s.dz)
    times, a, b = [], [], []

    def rec(t, W1, W2):
        times.append(t)
        a.append(0.5 * (W2[k5] - W1[k5]))
        b.append(0.5 * (W2[k15] - W1[k15]))

    zero = np.zeros(s.node_count)
    march((zero, zero), s, fluid, 5e-5, 1000, inflow=lambda t: math.exp(-((t - 8e-3) / 3e-3) ** 2),
          record=rec)
    t = np.array(times)
    speed = 10.0 / (_peak_time(t, np.array(b)) - _peak_time(t, np.array(a)))
    record_property("speed_ratio", f"{speed / c0:.4f}")
    assert abs(speed / c0 - 1) <= 0.02


@criterion(3, "stable at 5x the classical CFL step")
def test_c03_cfl_free(desk, warm, record_property):
    probe = Simulation(desk, PROTOCOL.dt)
    probe.restore(warm)
    bounds = []
    probe.run(PROTOCOL.warmup_end + desk.heart.T, lambda s: bounds.append(classical_cfl_step(s)))
    dt_cfl = min(bounds)
    sim = Simulation(desk, 5 * dt_cfl)
    lowest = []

    def check(s):
        for seg in desk.segments:
            A, Q = from_characteristics((s.W1[seg.id], s.W2[seg.id]), seg, desk.fluid)
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Q))):
                raise AssertionError(f"non-finite state at t={s.t}")
            lowest.append(float(np.min(A / seg.rest_area)))

    sim.run_steps(math.ceil(5.0 / sim.dt), check)
    record_property("dt_over_cfl", f"{sim.dt / dt_cfl:.1f}")
    record_property("min_A_over_A0", f"{min(lowest):.3f}")
    assert min(lowest) > 0


@criterion(4, "bifurcation mass and total-pressure residuals")
def test_c04_junction_residuals(desk, record_property):
    sim = Simulation(desk, PROTOCOL.dt, check_junctions=True)
    sim.run(10.0)
    record_property("mass", f"{sim.max_mass_residual:.1e}")
    record_property("pressure", f"{sim.max_pressure_residual:.1e}")
    assert sim.max_mass_residual <= 1e-8 and sim.max_pressure_residual <= 1e-8


@criterion(5, "beat-to-beat periodicity after warm-up (desk replacement)")
def test_c05_periodicity(desk, warm, record_property):
    sim = Simulation(desk, PROTOCOL.dt)
    sim.restore(warm)
    per_beat = round(desk.heart.T / sim.dt)
    beats = []
    for _ in range(2):
        rows = []
        for _ in range(per_beat):
            sim.run_steps(1)
            rows.append([v for m in desk.monitors for v in sim.node_values(m.segment, m.node)]
                        + list(sim.node_values(desk.inlet, 0)))
        beats.append(np.array(rows))
    change = np.max(np.abs(beats[1] - beats[0]) / np.max(np.abs(beats[0]), axis=0))
    record_property("max_relative_change", f"{change:.1e}")
    assert change < 0.01


def _mean_flows(desk, warm, degree):
    out = run_full_model(desk, degree, PROTOCOL, CACHE, warm)
    return float(np.mean(out["f56"])), float(np.mean(out["f55"]))


@criterion(6, "stenosis physics: flow through the stenosis and the parallel branch")
def test_c06_stenosis_physics(desk, warm, record_property):
    degrees = np.round(np.arange(1, 11) * 0.1, 10)
    q56 = [_mean_flows(desk, warm, r)[0] for r in degrees]
    record_property("mean_f56", "/".join(f"{q:.3f}" for q in q56))
    assert all(b <= a + 1e-9 for a, b in zip(q56, q56[1:]))
    healthy = _mean_flows(desk, warm, 1e-6)
    stenosed = _mean_flows(desk, warm, 0.7)
    assert stenosed[0] < 0.99 * healthy[0]
    assert stenosed[1] >= healthy[1]
    # at full occlusion the stenosis carries no flow at any instant
    sim = Simulation(desk, PROTOCOL.dt)
    sim.restore(warm)
    sim.set_stenosis_degree(1.0)
    flows = []
    sim.run(PROTOCOL.warmup_end + 1.0, lambda s: flows.append(s.Q_s))
    assert StenosisModel(sim.network.stenosis, desk.fluid).occluded
    assert max(abs(q) for q in flows) == 0.0


@criterion(7, "kernel interpolation and analytic derivative")
def test_c07_kernel_interpolation(datasets, record_property):
    ds = datasets[10]
    worst = 0.0
    for label in ds.labels:
        F = ds.outputs[label]
        m = fit_interpolant(ds.inputs, F, KernelConfig("gaussian", 5.0))
        res = np.max(np.linalg.norm(m.evaluate(ds.inputs) - F, axis=1)) / np.max(np.linalg.norm(F, axis=1))
        worst = max(worst, res)
    record_property("interp_rel", f"{worst:.1e}")
    assert worst <= 1e-8
    rng = np.random.default_rng(0)
    m = fit_interpolant(ds.inputs, ds.outputs["p56"], KernelConfig("gaussian", 5.0))
    h, grad_err = 1e-6, 0.0
    for x in rng.uniform(0.01, 0.99, 100):
        fd = (m.evaluate(x + h) - m.evaluate(x - h)) / (2 * h)
        an = m.evaluate_derivative(x)
        grad_err = max(grad_err, np.max(np.abs(an - fd)) / max(np.max(np.abs(an)), 1e-300))
    record_property("grad_rel", f"{grad_err:.1e}")
    assert grad_err <= 1e-5


@criterion(8, "greedy selection: plant-and-recover, power function, dense equivalence")
def test_c08_vkoga(datasets, pressure_models, record_property):
    grid = np.linspace(0, 1, 51)
    kc = KernelConfig("gaussian", 15.0)
    gen = InterpolantModel(np.array([[0.2], [0.5], [0.8]]), np.random.default_rng(1).normal(size=(3, 4)),
                           kc, 4)
    model, report, state = vkoga_fit(grid, gen.evaluate(grid), kc, keep_history=True)
    final = float(np.max(np.linalg.norm(state.residual, axis=1)))
    record_property("selections", len(report.selected))
    record_property("final_residual", f"{final:.1e}")
    assert len(report.selected) <= 6 and final < 1e-10
    P = np.array(report.power_history)
    assert np.all(np.diff(P, axis=0) <= 1e-10)
    # the trained distal pressure model, refit with its cross-validated kernel
    ds = datasets[40]
    kc = pressure_models[40].kernel
    g, rep, _ = vkoga_fit(ds.inputs, ds.outputs["p56"], kc, keep_history=True)
    assert np.all(np.diff(np.array(rep.power_history), axis=0) <= 1e-10)
    dense = fit_interpolant(ds.inputs[rep.selected], ds.outputs["p56"][rep.selected], kc)
    test = np.linspace(0, 1, 1001)
    gap = np.max(np.abs(g.evaluate(test) - dense.evaluate(test))) / np.max(np.abs(ds.outputs["p56"]))
    record_property("dense_gap_rel", f"{gap:.1e}")
    assert gap < 1e-10


@criterion(9, "surrogate convergence of the distal pressure model")
def test_c09_convergence(desk, warm, datasets, pressure_models, record_property):
    test = datasets[1000]
    ea = [evaluate_models({"p56": pressure_models[n]}, test.inputs, test.outputs)["p56"].E_A
          for n in SIZES]
    record_property("E_A", "/".join(f"{e:.2e}" for e in ea))
    inversions = sum(b > a for a, b in zip(ea, ea[1:]))
    assert inversions <= 1
    assert ea[SIZES.index(160)] / ea[SIZES.index(10)] <= 0.1
    # runtime budget: all snapshot runs at desk resolution within one hour
    per_run = time_full_model(desk, 0.5, PROTOCOL, warm, repeats=2)["mean_s"]
    total = per_run * (sum(SIZES) + 1000) + per_run * PROTOCOL.warmup_end / (PROTOCOL.final - PROTOCOL.warmup_end)
    record_property("projected_snapshot_s", f"{total:.0f}")
    assert total <= 3600.0


@criterion(10, "flow relative error is largest near full occlusion")
def test_c10_relative_error_structure(datasets, flow_model, record_property):
    test = datasets[1000]
    rep = evaluate_models({"f56": flow_model}, test.inputs, test.outputs)["f56"]
    worst = float(test.inputs[int(np.argmax(rep.e_rel))])
    record_property("argmax_e_R", f"{worst:.3f}")
    assert worst >= 0.9


@criterion(11, "pulsatility index of the surrogate falls with the degree, steeply above 0.5")
def test_c11_pulsatility(flow_model, record_property):
    grid = np.linspace(1e-6, 0.95, 400)
    pi = np.array([pulsatility_index(c) for c in flow_model.evaluate(grid)])
    assert np.all(np.diff(pi) < 0)
    low = (pi[0] - pi[grid <= 0.5][-1]) / 0.5
    high = (pi[grid <= 0.5][-1] - pi[-1]) / 0.45
    record_property("mean_slope_below_0.5", f"{low:.2f}")
    record_property("mean_slope_above_0.5", f"{high:.2f}")
    assert high > 5 * low


@criterion(12, "surrogate evaluation at least 1000x faster than the full model")
def test_c12_efficiency(desk, warm, flow_model, tmp_path, record_property):
    inputs = np.linspace(0, 1, 1000)
    sur = time_evaluation(flow_model, inputs, repeats=100)
    full = time_full_model(desk, 0.5, PROTOCOL, warm, repeats=1)
    ratio = sur["mean_per_input_s"] / full["mean_s"]
    record_property("time_ratio", f"{ratio:.1e}")
    assert ratio <= 1e-3
    path = tmp_path / "f56.model"
    flow_model.save(path)
    out = tmp_path / "bench.json"
    assert main(["bench", "--model", str(path), "--inputs", "1000", "--repeats", "100", "--out", str(out)]) == 0
    table = json.loads(out.read_text())["surrogate"]
    assert table["repeats"] == 100 and {"mean_per_input_s", "std_per_input_s"} <= set(table)


@criterion(13, "stenosis-degree estimation from noisy curves")
def test_c13_estimation(desk, warm, pressure_models, flow_model, record_property):
    models = {"p56": pressure_models[160], "f56": flow_model}
    errors = {}
    for R in (0.9, 0.1):
        curves = run_full_model(desk, R, PROTOCOL, CACHE, warm)
        for label, m in models.items():
            meas = make_measurement(curves[label], 0.1, seed=0, true_degree=R)
            errors[(label, R)] = abs(estimate(meas.y, m).degree - R)
    record_property("errors", ", ".join(f"{k[0]}@{k[1]}:{v:.2e}" for k, v in errors.items()))
    assert errors[("p56", 0.9)] <= 5e-3 and errors[("f56", 0.9)] <= 5e-3
    assert errors[("f56", 0.1)] < errors[("p56", 0.1)]
    for label, m in models.items():
        for R in (0.1, 0.5, 0.9):
            assert abs(estimate(m.evaluate(R), m).degree - R) < 1e-6


def _pipeline(root, cache):
    flags = ["--cache-dir", str(cache)]
    assert main(["snapshot", "--network", "desk", "--n", "5", "--out", str(root / "ds"), *flags]) == 0
    assert main(["train", "--dataset", str(root / "ds"), "--out", str(root / "models"), "--folds", "5"]) == 0
    assert main(["eval", "--models", str(root / "models"), "--test", str(root / "ds"),
                 "--out", str(root / "eval"), "--repeats", "3"]) == 0
    assert main(["estimate", "--model", str(root / "models" / "p56.model"), "--true-rs", "0.5",
                 "--network", "desk", "--out", str(root / "est" / "p56.json"), *flags]) == 0


def _deterministic_files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json" and not p.name.startswith("timing_")}


@criterion(14, "two pipeline runs give byte-identical artifacts")
def test_c14_determinism(tmp_path, record_property):
    a, b = tmp_path / "a", tmp_path / "b"
    _pipeline(a, tmp_path / "cache_a")
    _pipeline(b, tmp_path / "cache_b")
    fa, fb = _deterministic_files(a), _deterministic_files(b)
    record_property("files", len(fa))
    assert fa.keys() == fb.keys() and len(fa) >= 8 + 16 + 8 + 2
    differing = [str(k) for k in fa if fa[k] != fb[k]]
    assert not differing, differing
