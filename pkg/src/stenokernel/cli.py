"""Command-line interface: simulate, snapshot, train, eval, predict, estimate, bench.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure,
4 missing artifact.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .characteristics import FlowError
from .coupling import CouplingError
from .estimation import OptimizerSettings, estimate, make_measurement
from .kernels import InterpolantModel, KernelFactorizationError, ModelFormatError
from .network import NetworkConfigError, bundled_network_path, load_network, load_network_file
from .pipeline import (QUANTITIES, UNITS, SimulationFailed, SnapshotDataset, SnapshotProtocol,
                       build_dataset, default_cache_dir, equispaced_degrees, evaluate_models,
                       run_full_model, time_evaluation, time_full_model, train_all, warmup_state)
from .vkoga import CvSpec, GreedyBreakdown

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_MISSING = 0, 2, 3, 4
CONFIG_ENV = "STENOKERNEL_CONFIG_DIR"
MANIFEST = "manifest.json"


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# helpers

def resolve_network(spec: str):
    """Network from a file path, the config directory, or the bundled set."""
    p = Path(spec)
    if p.is_file():
        return load_network_file(p), str(p)
    stem = p.name
    for suffix in (".toml", ".net"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    cfg_dir = os.environ.get(CONFIG_ENV)
    if cfg_dir:
        for cand in (Path(cfg_dir) / spec, Path(cfg_dir) / f"{stem}.toml"):
            if cand.is_file():
                return load_network_file(cand), str(cand)
    bundled = bundled_network_path(stem)
    if bundled.is_file():
        return load_network(bundled.read_text(encoding="utf-8")), f"bundled:{stem}"
    raise FileNotFoundError(f"network configuration {spec!r} not found "
                            f"(looked in the working directory, ${CONFIG_ENV} and bundled networks)")


def _degree(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"stenosis degree must lie in [0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, args, inputs: list, outputs: list, started: float, extra=None):
    doc = {"command": args.command, "argv": sys.argv[1:], "package_version": __version__,
           "python": platform.python_version(), "numpy": np.__version__,
           "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
           "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
           "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
           "outputs": {str(Path(p).relative_to(out_dir)): _sha256(Path(p)) for p in outputs}}
    if extra:
        doc.update(extra)
    (out_dir / MANIFEST).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _protocol(args) -> SnapshotProtocol:
    return SnapshotProtocol(warmup_end=args.t1, final=args.t2, record_start=args.t2 - 1.0,
                            dt=args.dt)


def _cache(args):
    return None if args.no_cache else Path(args.cache_dir or default_cache_dir())


def write_curve(path: Path, times, values, label: str, note: str = "") -> None:
    lines = [f"# {QUANTITIES[label[0]]} at monitor {label[1:]}{note}",
             f"# columns: t [s], value [{UNITS[label[0]]}]",
             f"# manifest: {MANIFEST}"]
    lines += [f"{t!r},{float(v)!r}" for t, v in zip(times, values)]
    path.write_text("\n".join(lines) + "\n")


def read_curve(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"curve file {path} not found")
    rows = [ln.split(",") for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    return np.array([float(r[-1]) for r in rows])


def _load_model(path: str) -> InterpolantModel:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file {p} not found")
    return InterpolantModel.load(p)


def _model_times(model: InterpolantModel) -> np.ndarray:
    proto = model.metadata.get("protocol") or {}
    start = proto.get("record_start", 29.0)
    rate = proto.get("sample_rate", 400.0)
    return start + np.arange(model.output_dim) / rate


# --------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    started = time.time()
    net, src = resolve_network(args.network)
    protocol = _protocol(args)
    curves = run_full_model(net, args.rs, protocol, cache_dir=_cache(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for label in sorted(curves):
        path = out / f"{label}.csv"
        write_curve(path, protocol.sample_times(), curves[label], label, f", R_s = {args.rs!r}")
        written.append(path)
    _write_manifest(out, args, [src], written, started, {"network_digest": net.digest(),
                                                          "protocol": protocol.to_dict()})
    print(f"wrote {len(written)} curve files to {out}")
    return EXIT_OK


def cmd_snapshot(args) -> int:
    started = time.time()
    net, src = resolve_network(args.network)
    protocol = _protocol(args)
    inputs = equispaced_degrees(args.n, protocol.healthy_degree)
    ds = build_dataset(net, inputs, protocol, jobs=args.jobs, cache_dir=_cache(args))
    ds.provenance["manifest"] = MANIFEST
    out = Path(args.out)
    ds.save(out)
    files = [out / "dataset.json"] + [out / f"{lab}.csv" for lab in ds.labels]
    _write_manifest(out, args, [src], files, started, {"jobs": args.jobs})
    print(f"dataset with N={ds.inputs.size} inputs and {len(ds.labels)} outputs written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    ds = SnapshotDataset.load(args.dataset)
    labels = args.labels or ds.labels
    missing = [lab for lab in labels if lab not in ds.outputs]
    if missing:
        raise UsageError(f"dataset has no outputs {missing}; available: {ds.labels}")
    grids = {}
    if args.epsilons:
        grids["epsilons"] = tuple(args.epsilons)
    if args.regs:
        grids["regs"] = tuple(args.regs)
    spec = CvSpec(folds=min(args.folds, ds.inputs.size), seed=args.seed, family=args.family, **grids)
    out = Path(args.out)
    results = train_all(ds, spec, labels, out_dir=None)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for label, res in results.items():
        res.model.metadata["manifest"] = MANIFEST
        res.model.save(out / f"{label}.model")
        rep = res.to_dict()
        rep["manifest"] = MANIFEST
        (out / f"{label}.report.json").write_text(json.dumps(rep, sort_keys=True) + "\n")
        files += [out / f"{label}.model", out / f"{label}.report.json"]
        print(f"{label}: eps={res.epsilon:.4g} reg={res.reg:.3g} centers={res.model.n_centers}"
              f"/{ds.inputs.size} ({res.report.stop_reason})")
    _write_manifest(out, args, [Path(args.dataset) / "dataset.json"], files, started,
                    {"seed": args.seed, "folds": spec.folds})
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    test = SnapshotDataset.load(args.test)
    model_dir = Path(args.models)
    if not model_dir.is_dir():
        raise FileNotFoundError(f"model directory {model_dir} not found")
    paths = sorted(model_dir.glob("*.model"))
    if not paths:
        raise FileNotFoundError(f"no *.model files in {model_dir}")
    models = {p.stem: InterpolantModel.load(p) for p in paths}
    reports = evaluate_models(models, test.inputs, test.outputs, repeats=args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for label, rep in reports.items():
        doc = rep.to_dict()
        doc["manifest"] = MANIFEST
        path = out / f"{label}.errors.json"
        path.write_text(json.dumps(doc, sort_keys=True) + "\n")
        files.append(path)
        if rep.timing is not None:
            tpath = out / f"timing_{label}.json"
            tpath.write_text(json.dumps(rep.timing, sort_keys=True, indent=1) + "\n")
            files.append(tpath)
        print(f"{label}: E_A={rep.E_A:.4e} E_R={rep.E_R:.4e} centers={rep.n_centers}")
    _write_manifest(out, args, paths + [Path(args.test) / "dataset.json"], files, started)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    curve = model.evaluate(args.rs)
    label = model.metadata.get("label", "p0")
    times = _model_times(model)
    if args.out:
        write_curve(Path(args.out), times, curve, label, f", surrogate at R_s = {args.rs!r}")
    else:
        print(f"# columns: t [s], value [{UNITS.get(label[0], '')}]")
        for t, v in zip(times, curve):
            print(f"{t!r},{float(v)!r}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    if args.curve:
        y = read_curve(Path(args.curve))
        meas = make_measurement(y, args.sigma or 0.0, args.seed)
        src = [args.curve]
    elif args.true_rs is not None:
        if args.source == "model":
            f_true = model.evaluate(args.true_rs)
            src = []
        else:
            net, s = resolve_network(args.network)
            label = model.metadata.get("label")
            if not label:
                raise UsageError("model file carries no output label; use --source model or --curve")
            f_true = run_full_model(net, args.true_rs, _protocol(args), cache_dir=_cache(args))[label]
            src = [s]
        sigma = 0.1 if args.sigma is None else args.sigma
        meas = make_measurement(f_true, sigma, args.seed, args.true_rs)
    else:
        raise UsageError("give either --curve or --true-rs")
    if meas.y.size != model.output_dim:
        raise UsageError(f"measurement has {meas.y.size} samples, model expects {model.output_dim}")
    res = estimate(meas.y, model, OptimizerSettings(scan_points=args.scan))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    extra = {"model": Path(args.model).name, "manifest": MANIFEST}
    if args.profile and res.profile is not None:
        prof = out.with_name(out.stem + ".profile.csv")
        rows = ["# R_s, J"] + [f"{x!r},{j!r}" for x, j in zip(*res.profile)]
        prof.write_text("\n".join(rows) + "\n")
        extra["profile"] = prof.name
    out.write_text(res.to_json(meas, **extra))
    err = f" (error {abs(res.degree - meas.true_degree):.3e})" if meas.true_degree is not None else ""
    print(f"estimated R_s = {res.degree:.6f}{err}, J = {res.cost:.3e}")
    _write_manifest(out.parent, args, src + [args.model], [out], started, {"seed": args.seed})
    return EXIT_OK


def cmd_bench(args) -> int:
    model = _load_model(args.model)
    inputs = np.linspace(0.0, 1.0, args.inputs)
    surrogate = time_evaluation(model, inputs, args.repeats)
    table = {"surrogate": surrogate}
    if args.network:
        net, _ = resolve_network(args.network)
        protocol = _protocol(args)
        warm = warmup_state(net, protocol, _cache(args))
        full = time_full_model(net, 0.5, protocol, warm, repeats=args.full_runs)
        table["full_model"] = full
        table["speedup"] = full["mean_s"] / surrogate["mean_per_input_s"]
    text = json.dumps(table, sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"surrogate: mean {surrogate['mean_per_input_s']:.3e} s/input "
          f"(std {surrogate['std_per_input_s']:.3e}) over {args.repeats} repeats of {args.inputs} inputs")
    if "full_model" in table:
        print(f"full model: mean {table['full_model']['mean_s']:.3e} s/run, "
              f"speedup {table['speedup']:.3e}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stenokernel", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def protocol_flags(p):
        p.add_argument("--dt", type=float, default=2.5e-3, help="time step [s]")
        p.add_argument("--t1", type=float, default=20.0, help="end of the healthy warm-up [s]")
        p.add_argument("--t2", type=float, default=30.0, help="final time; the last second is recorded")
        p.add_argument("--cache-dir", default=None, help="warm-up and run cache directory")
        p.add_argument("--no-cache", action="store_true")

    p = sub.add_parser("simulate", help="full-model curves for one stenosis degree")
    p.add_argument("--network", required=True)
    p.add_argument("--rs", type=_degree, required=True)
    p.add_argument("--out", default="curves")
    protocol_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("snapshot", help="dataset of N equally spaced stenosis degrees")
    p.add_argument("--network", required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=_positive_int, default=1)
    protocol_flags(p)
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("train", help="cross-validated greedy surrogates per output")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", nargs="*")
    p.add_argument("--folds", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", choices=("gaussian", "wendland"), default="gaussian")
    p.add_argument("--epsilons", type=float, nargs="+",
                   help="shape-parameter grid (default 20 values in [1e-2, 50])")
    p.add_argument("--regs", type=float, nargs="+",
                   help="regularization grid (default 15 values in [1e-16, 1e-2])")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error reports of trained models on a test dataset")
    p.add_argument("--models", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="surrogate curve for one stenosis degree")
    p.add_argument("--model", required=True)
    p.add_argument("--rs", type=_degree, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("estimate", help="stenosis degree from a measured or synthetic curve")
    p.add_argument("--model", required=True)
    p.add_argument("--curve", help="measured curve file (time,value rows)")
    p.add_argument("--true-rs", type=_degree, help="synthesize the measurement at this degree")
    p.add_argument("--source", choices=("full", "model"), default="full")
    p.add_argument("--network", default="desk")
    p.add_argument("--sigma", type=float, default=None,
                   help="uniform noise level (default 0.1 with --true-rs, 0 with --curve)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scan", type=int, default=1001)
    p.add_argument("--profile", action="store_true", help="also write the cost profile")
    p.add_argument("--out", default="estimate.json")
    protocol_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="surrogate evaluation timing and speedup")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", type=_positive_int, default=1000)
    p.add_argument("--repeats", type=_positive_int, default=100)
    p.add_argument("--network", help="also time full-model runs on this network")
    p.add_argument("--full-runs", type=_positive_int, default=1)
    p.add_argument("--out")
    protocol_flags(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (SimulationFailed, FlowError, CouplingError, KernelFactorizationError,
            GreedyBreakdown, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, NetworkConfigError, ModelFormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
