"""Snapshot protocol, datasets, surrogate training and error evaluation.

The full model is first run to T1 in the healthy state; that state is cached
once per network and solver setting. Each snapshot then restarts from it,
activates the stenosis with the requested degree, integrates to T2 and records
the last heart beat at a fixed sample rate. Pressures are stored in mmHg and
flow rates in cm^3/s.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .characteristics import FlowError
from .coupling import CouplingError
from .kernels import InterpolantModel
from .network import NetworkTopology
from .solver import Simulation
from .units import cgs_to_mmhg
from .vkoga import CvResult, CvSpec, cross_validate

QUANTITIES = {"p": "pressure", "f": "flow"}
UNITS = {"p": "mmHg", "f": "cm^3/s"}
DATASET_FORMAT = "stenokernel-dataset"
DATASET_VERSION = 1
REPORT_FORMAT = "stenokernel-error-report"
REPORT_VERSION = 1


class SimulationFailed(RuntimeError):
    def __init__(self, degree: float, message: str):
        super().__init__(f"full model failed for R_s={degree!r}: {message}")
        self.degree = degree


@dataclass(frozen=True)
class SnapshotProtocol:
    warmup_end: float = 20.0
    final: float = 30.0
    record_start: float = 29.0
    sample_rate: float = 400.0
    healthy_degree: float = 1e-6
    dt: float = 2.5e-3

    def __post_init__(self):
        if not 0.0 < self.warmup_end <= self.record_start < self.final:
            raise ValueError("record window must lie inside [warm-up end, final time]")
        if self.sample_steps < 1 or abs(self.sample_steps * self.dt * self.sample_rate - 1.0) > 1e-9:
            raise ValueError(f"time step {self.dt} must divide the sampling interval "
                             f"1/{self.sample_rate} exactly")
        if abs(self.q - self.sample_rate * (self.final - self.record_start)) > 1e-9:
            raise ValueError("record window must hold an integral number of samples")

    @property
    def sample_steps(self) -> int:
        return round(1.0 / (self.sample_rate * self.dt))

    @property
    def q(self) -> int:
        return round(self.sample_rate * (self.final - self.record_start))

    def sample_times(self) -> np.ndarray:
        return self.record_start + np.arange(self.q) / self.sample_rate

    def to_dict(self) -> dict:
        return asdict(self)


def equispaced_degrees(n: int, healthy: float = 1e-6) -> np.ndarray:
    """n equally spaced stenosis degrees in [healthy, 1], both endpoints included."""
    if n < 1:
        raise ValueError("size must be at least 1")
    if n == 1:
        return np.array([healthy])
    return np.linspace(healthy, 1.0, n)


def _key(*parts) -> str:
    return hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()[:24]


def default_cache_dir() -> Path:
    env = os.environ.get("STENOKERNEL_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "stenokernel"


# --------------------------------------------------------------------------
# full model runs

def _warm_key(network: NetworkTopology, protocol: SnapshotProtocol) -> str:
    healthy = network.with_stenosis_degree(protocol.healthy_degree)
    return _key("warm", healthy.digest(), repr(protocol.dt), repr(protocol.warmup_end), __version__)


def warmup_state(network: NetworkTopology, protocol: SnapshotProtocol, cache_dir=None) -> dict:
    """Healthy-state solver snapshot at T1, computed once and cached on disk."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"warmup-{_warm_key(network, protocol)}.npz"
        if path.exists():
            with np.load(path) as z:
                return {k: z[k] for k in z.files}
    sim = Simulation(network.with_stenosis_degree(protocol.healthy_degree), protocol.dt)
    try:
        sim.run(protocol.warmup_end)
    except (FlowError, CouplingError) as exc:
        raise SimulationFailed(protocol.healthy_degree, f"warm-up: {exc}") from exc
    snap = sim.snapshot()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
        np.savez(tmp, **snap)
        os.replace(tmp, path)
    return snap


def _check_degree(degree: float, protocol: SnapshotProtocol) -> float:
    degree = float(degree)
    if not 0.0 <= degree <= 1.0:
        raise ValueError(f"stenosis degree {degree} outside [0, 1]")
    return max(degree, protocol.healthy_degree)


def simulate_snapshot(network: NetworkTopology, degree: float, protocol: SnapshotProtocol,
                      warm: dict) -> dict[str, np.ndarray]:
    """Record one snapshot; keys are '<p|f><monitor>' with q samples each."""
    degree = _check_degree(degree, protocol)
    sim = Simulation(network, protocol.dt)
    sim.restore(warm)
    sim.set_stenosis_degree(degree)
    first = sim.steps_until(protocol.record_start)
    m, q = protocol.sample_steps, protocol.q
    monitors = network.monitors
    out = {f"{k}{mon.name}": np.empty(q) for mon in monitors for k in QUANTITIES}
    try:
        sim.run_steps(first)
        for i in range(q):
            for mon in monitors:
                p, Q = sim.node_values(mon.segment, mon.node)
                out[f"p{mon.name}"][i] = cgs_to_mmhg(p)
                out[f"f{mon.name}"][i] = Q
            sim.run_steps(m)
    except (FlowError, CouplingError) as exc:
        raise SimulationFailed(degree, f"t={sim.t:.4f} s: {exc}") from exc
    return out


def run_full_model(network: NetworkTopology, degree: float, protocol: SnapshotProtocol | None = None,
                   cache_dir=None, warm: dict | None = None) -> dict[str, np.ndarray]:
    """Snapshot curves for one stenosis degree, using on-disk caches when `cache_dir` is set."""
    protocol = protocol or SnapshotProtocol()
    degree = _check_degree(degree, protocol)
    path = None
    if cache_dir is not None:
        key = _key("run", _warm_key(network, protocol), repr(protocol.to_dict()), repr(degree))
        path = Path(cache_dir) / "runs" / f"{key}.npz"
        if path.exists():
            with np.load(path) as z:
                return {k: z[k] for k in z.files}
    if warm is None:
        warm = warmup_state(network, protocol, cache_dir)
    out = simulate_snapshot(network, degree, protocol, warm)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
        np.savez(tmp, **out)
        os.replace(tmp, path)
    return out


def _worker(args):
    network, degree, protocol, cache_dir, warm = args
    try:
        return run_full_model(network, degree, protocol, cache_dir, warm)
    except SimulationFailed as exc:
        return exc


# --------------------------------------------------------------------------
# datasets

@dataclass
class SnapshotDataset:
    inputs: np.ndarray                      # (N,) sorted, distinct
    outputs: dict[str, np.ndarray]          # label -> (N, q)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim != 1 or np.any(np.diff(x) <= 0):
            raise ValueError("dataset inputs must be strictly increasing")
        for label, F in self.outputs.items():
            if F.shape[0] != x.size or not np.all(np.isfinite(F)):
                raise ValueError(f"output {label}: expected {x.size} finite rows")
        self.inputs = x

    @property
    def labels(self) -> list[str]:
        return sorted(self.outputs)

    @property
    def q(self) -> int:
        return next(iter(self.outputs.values())).shape[1]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "provenance": self.provenance,
                "inputs": [float(x) for x in self.inputs], "labels": self.labels, "q": self.q}
        (d / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
        for label in self.labels:
            _write_rows(d / f"{label}.csv", label, self.inputs, self.outputs[label], self.provenance)

    @classmethod
    def load(cls, directory) -> SnapshotDataset:
        d = Path(directory)
        meta_path = d / "dataset.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"dataset descriptor {meta_path} not found")
        meta = json.loads(meta_path.read_text())
        if meta.get("format") != DATASET_FORMAT or meta.get("version") != DATASET_VERSION:
            raise ValueError(f"{meta_path}: unsupported dataset format/version")
        inputs = np.array(meta["inputs"], dtype=float)
        outputs = {}
        for label in meta["labels"]:
            x, F = _read_rows(d / f"{label}.csv")
            if not np.array_equal(x, inputs):
                raise ValueError(f"{label}.csv: inputs disagree with dataset.json")
            outputs[label] = F
        return cls(inputs, outputs, meta["provenance"])


def _write_rows(path: Path, label: str, inputs, F, provenance) -> None:
    lines = [f"# {DATASET_FORMAT} v{DATASET_VERSION}",
             f"# quantity: {QUANTITIES[label[0]]} [{UNITS[label[0]]}] at monitor {label[1:]}",
             f"# network: {provenance.get('network_digest', '')}",
             "# columns: R_s, then q samples over the recorded heart beat",
             f"# q: {F.shape[1]}"]
    for x, row in zip(inputs, F):
        lines.append(",".join(repr(float(v)) for v in (x, *row)))
    path.write_text("\n".join(lines) + "\n")


def _read_rows(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"dataset file {path} not found")
    rows = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in rows], dtype=float)
    return data[:, 0], data[:, 1:]


def provenance(network: NetworkTopology, protocol: SnapshotProtocol) -> dict:
    return {"network": network.name, "network_digest": network.digest(),
            "protocol": protocol.to_dict(), "monitors": [m.name for m in network.monitors],
            "solver": {"method": "characteristics", "dt": protocol.dt,
                       "dz": {str(s.id): s.dz for s in network.segments}},
            "package_version": __version__}


def build_dataset(network: NetworkTopology, inputs, protocol: SnapshotProtocol | None = None,
                  jobs: int = 1, cache_dir=None) -> SnapshotDataset:
    """Run the full model for every input degree and assemble a dataset (input order kept)."""
    protocol = protocol or SnapshotProtocol()
    inputs = np.asarray(inputs, dtype=float)
    warm = warmup_state(network, protocol, cache_dir)
    tasks = [(network, float(x), protocol, cache_dir, warm) for x in inputs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_worker(t) for t in tasks]
    failed = [r.degree for r in results if isinstance(r, SimulationFailed)]
    if failed:
        raise SimulationFailed(failed[0], f"{len(failed)} run(s) failed, degrees {failed}")
    labels = sorted(results[0]) if results else []
    outputs = {lab: np.vstack([r[lab] for r in results]) for lab in labels}
    return SnapshotDataset(inputs, outputs, provenance(network, protocol))


# --------------------------------------------------------------------------
# training and evaluation

def train_all(dataset: SnapshotDataset, spec: CvSpec | None = None, labels=None,
              out_dir=None) -> dict[str, CvResult]:
    """One cross-validated greedy surrogate per monitored (vessel, quantity)."""
    spec = spec or CvSpec()
    results = {}
    for label in labels or dataset.labels:
        try:
            res = cross_validate(dataset.inputs, dataset.outputs[label], spec)
        except Exception as exc:
            raise RuntimeError(f"training {label} failed: {exc}") from exc
        meta = {"label": label, "quantity": QUANTITIES[label[0]], "monitor": label[1:],
                "units": UNITS[label[0]], "cv_seed": spec.seed, "n_train": int(dataset.inputs.size),
                "dataset_network": dataset.provenance.get("network_digest", ""),
                "protocol": dataset.provenance.get("protocol", {})}
        res.model = InterpolantModel(res.model.centers, res.model.coefficients, res.model.kernel,
                                     res.model.output_dim, meta)
        results[label] = res
        if out_dir is not None:
            d = Path(out_dir)
            d.mkdir(parents=True, exist_ok=True)
            res.model.save(d / f"{label}.model")
            (d / f"{label}.report.json").write_text(json.dumps(res.to_dict(), sort_keys=True) + "\n")
    return results


@dataclass
class ErrorReport:
    label: str
    inputs: np.ndarray
    e_abs: np.ndarray
    e_rel: np.ndarray
    n_centers: int
    timing: dict | None = None

    @property
    def E_A(self) -> float:
        return float(np.max(self.e_abs))

    @property
    def E_R(self) -> float:
        return float(np.max(self.e_rel))

    def to_dict(self) -> dict:
        """Deterministic content only; timing is kept in a separate file."""
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION, "label": self.label,
                "n_centers": self.n_centers, "E_A": self.E_A, "E_R": self.E_R,
                "inputs": [float(x) for x in self.inputs],
                "e_A": [float(x) for x in self.e_abs], "e_R": [float(x) for x in self.e_rel]}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")


def curve_errors(pred: np.ndarray, ref: np.ndarray):
    """Pointwise absolute and relative 2-norm errors between row-wise curves."""
    e_abs = np.linalg.norm(ref - pred, axis=1)
    norm = np.linalg.norm(ref, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_rel = np.where(norm > 0, e_abs / norm, np.where(e_abs > 0, np.inf, 0.0))
    return e_abs, e_rel


def time_evaluation(model, inputs, repeats: int = 100) -> dict:
    """Wall time of evaluating `model` at all inputs: one warm pass, then `repeats` timed passes."""
    x = np.asarray(inputs, dtype=float)
    model.evaluate(x)
    times = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        model.evaluate(x)
        times[i] = time.perf_counter() - t0
    per_input = times / x.size
    return {"repeats": repeats, "inputs": int(x.size), "mean_pass_s": float(times.mean()),
            "std_pass_s": float(times.std()), "mean_per_input_s": float(per_input.mean()),
            "std_per_input_s": float(per_input.std())}


def evaluate_models(models: dict, test_inputs, reference: dict, repeats: int = 0) -> dict[str, ErrorReport]:
    """Error report per model label against full-model reference rows."""
    x = np.asarray(test_inputs, dtype=float)
    reports = {}
    for label, model in models.items():
        if label not in reference:
            raise KeyError(f"no reference rows for {label}")
        ref = np.asarray(reference[label], dtype=float)
        if ref.shape[0] != x.size:
            raise ValueError(f"{label}: {ref.shape[0]} reference rows for {x.size} inputs")
        e_abs, e_rel = curve_errors(np.atleast_2d(model.evaluate(x)), ref)
        timing = time_evaluation(model, x, repeats) if repeats else None
        reports[label] = ErrorReport(label, x, e_abs, e_rel, getattr(model, "n_centers", 0), timing)
    return reports


def pulsatility_index(curve) -> float:
    """(max - min) / mean of one recorded beat."""
    c = np.asarray(curve, dtype=float)
    m = float(np.mean(c))
    if m == 0.0:
        raise ValueError("pulsatility index undefined for a zero-mean curve")
    return float((c.max() - c.min()) / m)


def time_full_model(network: NetworkTopology, degree: float, protocol: SnapshotProtocol,
                    warm: dict, repeats: int = 1) -> dict:
    """Wall time of uncached snapshot runs restarting from the warm-up state."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        simulate_snapshot(network, degree, protocol, warm)
        times.append(time.perf_counter() - t0)
    t = np.array(times)
    return {"repeats": repeats, "mean_s": float(t.mean()), "std_s": float(t.std())}
