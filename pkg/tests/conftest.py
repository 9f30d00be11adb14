import numpy as np
import pytest

from stenokernel.coupling import flow_boundary
from stenokernel.network import FluidProperties, VesselSegment, fit_grid, load_bundled
from stenokernel.solver import nmc_step, outgoing_characteristics


def make_segment(length=10.0, A0=1.0, c0=500.0, dz=0.1, rho=1.06, sid=1):
    dz, n = fit_grid(length, dz)
    return VesselSegment(sid, length, A0, 2 * rho * c0 ** 2, dz, n)


def march(W, seg, fluid, dt, steps, left="rest", right="rest", inflow=None, record=None):
    """Drive a single vessel; ends are 'rest' (ingoing 0), 'wall' (Q = 0) or an inflow Q(t)."""
    W1, W2 = np.array(W[0], float), np.array(W[1], float)
    for n in range(steps):
        out = outgoing_characteristics((W1, W2), seg, fluid, dt)
        t_new = (n + 1) * dt
        if inflow is not None:
            w2_in = flow_boundary(out[0], inflow(t_new), seg, fluid, "left")
        elif left == "wall":
            w2_in = out[0]
        else:
            w2_in = 0.0
        w1_in = out[1] if right == "wall" else 0.0
        W1, W2 = nmc_step((W1, W2), seg, fluid, dt, w2_in, w1_in, outgoing=out, t=n * dt)
        if record is not None:
            record(t_new, W1, W2)
    return W1, W2


@pytest.fixture(scope="session")
def desk():
    return load_bundled("desk")


@pytest.fixture
def inviscid():
    return FluidProperties(1.06, 0.0)


# -- acceptance summary ------------------------------------------------------

_CRITERIA: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, [title, True, []])
    if rep.failed:
        entry[1] = False
    if rep.when == "call":
        entry[2] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}"
        if details:
            line += "  [" + ", ".join(details) + "]"
        terminalreporter.write_line(line)
