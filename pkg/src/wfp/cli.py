"""``wfp`` command line: data generation, training, inference, reference runs.

Settings resolve in three layers: profile defaults, then ``--config`` file
(``key = value`` lines, ``#`` comments), then explicit flags.  Failures print
one JSON line ``{"error": ..., "message": ...}`` to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import struct
import sys
import time
import warnings
from pathlib import Path

import numpy as np

log = logging.getLogger("wfp")


class ConfigError(ValueError):
    pass


class IoError(OSError):
    pass


EXIT_CODES = {"ConfigError": 2, "IoError": 3}


# ---------------------------------------------------------------------------
# configuration

def _activation(text: str) -> str:
    from .network import ActivationSpec

    ActivationSpec.parse(text)
    return text


def _ood(text: str) -> str:
    if text not in ("none", "disc", "strong"):
        raise ValueError("expected none, disc or strong")
    return text


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


SCHEMA = {
    "dim": int,
    "grid_n": int,
    "domain_len": float,
    "t_final": float,
    "alpha": float,
    "delta": float,
    "ood": _ood,
    "tau": float,
    "r_c": int,
    "r_w": int,
    "n_samples": int,
    "n_test": int,
    "hidden": int,
    "epochs": int,
    "batch": int,
    "lr": float,
    "activation": _activation,
    "seed": int,
    "cfl": float,
    "eps": float,
    "k0": int,
    "n1": _int_list,
    "levels": _float_list,
    "n_media": int,
    "steps": int,
    "data": str,
    "model": str,
    "out": str,
}

DESK = {
    "dim": 1,
    "grid_n": 1024,
    "domain_len": 1.0,
    "t_final": 0.02,
    "alpha": 0.03,
    "delta": 0.05,
    "ood": "none",
    "tau": 0.1,
    "r_c": 5,
    "r_w": 7,
    "n_samples": 2000,
    "n_test": 200,
    "hidden": 256,
    "epochs": 2000,
    "batch": 100,
    "lr": 1e-3,
    "activation": "osc",
    "seed": 0,
    "cfl": 0.5,
    "eps": 0.02,
    "k0": 20,
    "n1": [18, 19, 21, 22],
    "levels": [0.03, 0.06, 0.1, 0.15, 0.2],
    "n_media": 5,
    "steps": 1,
}

PAPER = dict(DESK, grid_n=2049, n_samples=10000, hidden=6000, epochs=20000)
PAPER_2D = {"grid_n": 2049, "n_samples": 100000, "hidden": 8000}
DESK_2D = {"grid_n": 513}

PROFILES = {"desk": DESK, "paper": PAPER}

# the theorem check lives on [0, 2 pi) with its own time scale
THEOREM_DEFAULTS = {"t_final": 0.05, "grid_n": 4096}


def read_config(path) -> dict:
    """Parse a ``key = value`` file; unknown keys and bad values are errors."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        out[key] = _coerce(key, value, f"{path}:{lineno}")
    return out


def _coerce(key, value, where):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return SCHEMA[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {value!r} ({exc})") from None


def resolve(args: argparse.Namespace, keys, defaults=None) -> dict:
    """Profile defaults < command defaults < config file < explicit flags."""
    base = dict(PROFILES[args.profile], **(defaults or {}))
    dim = getattr(args, "dim", None)
    file_cfg = read_config(args.config) if args.config else {}
    dim = dim or file_cfg.get("dim", base["dim"])
    if dim == 2:
        base.update(PAPER_2D if args.profile == "paper" else DESK_2D)
    base.update(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    return {k: base.get(k) for k in keys}


def run_id(cfg: dict, command: str) -> str:
    blob = json.dumps({"cmd": command, **cfg}, sort_keys=True, default=str)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def _require(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")


def _out(cfg, suffix=""):
    _require(cfg, "out")
    p = Path(cfg["out"] + suffix)
    if p.parent and not p.parent.exists():
        raise IoError(f"output directory {p.parent} does not exist")
    return p


def _exists(path):
    if not Path(path).exists():
        raise IoError(f"{path} does not exist")
    return path


def write_metrics(path, rows: list[dict]) -> None:
    """CSV with the header taken from the first row; rewritten on every run."""
    cols = list(rows[0])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10e}"
    return str(v)


# ---------------------------------------------------------------------------
# shared builders

def _grid(cfg):
    from .fields import Grid

    return Grid(cfg["dim"], cfg["grid_n"], cfg["domain_len"])


def _medium_spec(cfg, seed):
    from .datagen import MediumKind, MediumSpec

    kind = {"none": MediumKind.IN_DIST, "disc": MediumKind.OOD_DISCONTINUOUS, "strong": MediumKind.OOD_STRONG}[cfg["ood"]]
    return MediumSpec(kind, alpha=cfg["alpha"], seed=seed, delta=cfg["delta"] if cfg["ood"] == "disc" else 0.0)


def _load_medium(args, cfg, grid):
    """``--medium`` file of ``c^2`` values, else a generated medium from the seed."""
    from .datagen import gen_medium
    from .fields import read_field
    from .solver import Medium

    if args.medium:
        c_sq = read_field(_exists(args.medium))
        if c_sq.grid != grid:
            raise ConfigError("medium grid differs from the field grid")
        return Medium(c_sq)
    return gen_medium(_medium_spec(cfg, cfg["seed"]), grid)


def _load_initial(args, cfg):
    from .datagen import gen_initial
    from .fields import read_field

    if args.init_field:
        f = read_field(_exists(args.init_field))
        return f, f.grid
    grid = _grid(cfg)
    if args.init_k is None:
        raise ConfigError("give --init-field or --init-k")
    return gen_initial(args.init_k, grid), grid


def _load_model(cfg):
    from .pipeline import WfpModel

    _require(cfg, "model")
    try:
        return WfpModel.load(_exists(cfg["model"]))
    except (ValueError, struct.error) as exc:
        raise IoError(f"{cfg['model']}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    from .datagen import build_dataset, write_dataset

    cfg = resolve(args, ["dim", "grid_n", "domain_len", "n_samples", "alpha", "seed", "t_final", "r_c", "r_w", "ood", "delta", "cfl", "out"])
    grid = _grid(cfg)
    path = _out(cfg)
    ds = build_dataset(
        cfg["n_samples"], _medium_spec(cfg, 0), grid, cfg["t_final"], cfg["r_c"], cfg["r_w"], cfg["seed"], cfl_safety=cfg["cfl"]
    )
    write_dataset(path, ds)
    log.info("wrote %d records (%d failures) to %s", len(ds), ds.failures, path)
    return 0


def cmd_train(args) -> int:
    from .datagen import read_dataset
    from .network import ActivationSpec, ModelMeta, TrainConfig, fit_dataset, save_checkpoint, write_history_csv

    cfg = resolve(args, ["data", "hidden", "epochs", "batch", "lr", "activation", "seed", "n_test", "tau", "out"])
    _require(cfg, "data")
    path = _out(cfg)
    ds = read_dataset(_exists(cfg["data"]))
    if len(ds) == 0:
        raise ConfigError("dataset is empty")
    train_ds, test_ds = ds.split(cfg["n_test"])
    tcfg = TrainConfig(lr0=cfg["lr"], batch=cfg["batch"], epochs=cfg["epochs"], hidden=cfg["hidden"], seed=cfg["seed"])
    meta = ModelMeta.for_dataset(ds, tau=cfg["tau"])
    params, meta, history = fit_dataset(train_ds, tcfg, ActivationSpec.parse(cfg["activation"]), test_ds, meta)
    save_checkpoint(path, params, meta)
    write_history_csv(Path(str(path) + ".loss.csv"), history)
    if history:
        log.info("final train mse %.3e, test mse %.3e", history[-1][1], history[-1][2])
    return 0


def cmd_infer(args) -> int:
    from .fields import read_field, write_field
    from .pipeline import error_metrics, predict, rollout
    from .solver import WaveState

    cfg = resolve(args, ["model", "steps", "tau", "dim", "grid_n", "domain_len", "alpha", "ood", "delta", "seed", "out"])
    model = _load_model(cfg)
    cfg.update(dim=model.meta.dim, domain_len=model.meta.domain_len)
    f, grid = _load_initial(args, cfg)
    medium = _load_medium(args, cfg, grid)
    _out(cfg)
    if cfg["steps"] < 1:
        raise ConfigError("steps must be at least 1")
    if cfg["steps"] == 1:
        state = predict(model, f, None, medium, tau=cfg["tau"])
    else:
        state = rollout(model, f, None, medium, cfg["steps"], tau=cfg["tau"]).final
    write_field(cfg["out"] + ".u.wfp", state.u)
    write_field(cfg["out"] + ".v.wfp", state.v)
    row = {"run_id": run_id(cfg, "infer"), "t": state.t}
    if args.reference:
        ref_u = read_field(_exists(args.reference))
        row.update(error_metrics(state, WaveState(ref_u, ref_u, state.t)))
    with open(cfg["out"] + ".metrics.jsonl", "w") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
    return 0


def cmd_solve_ref(args) -> int:
    from .fields import SpatialField, read_field, write_field
    from .solver import SolverConfig, integrate, write_energy_csv

    cfg = resolve(args, ["t_final", "cfl", "dim", "grid_n", "domain_len", "alpha", "ood", "delta", "seed", "out"])
    f, grid = _load_initial(args, cfg)
    medium = _load_medium(args, cfg, grid)
    g = read_field(_exists(args.init_velocity)) if args.init_velocity else SpatialField(grid, np.zeros(grid.shape))
    _out(cfg)
    scfg = SolverConfig(cfg["t_final"], dt=args.dt, cfl_safety=cfg["cfl"])
    traj = integrate(f, g, medium, scfg, energy_every=args.energy_every)
    write_field(cfg["out"] + ".u.wfp", traj.final.u)
    write_field(cfg["out"] + ".v.wfp", traj.final.v)
    write_energy_csv(cfg["out"] + ".energy.csv", traj)
    return 0


def cmd_verify_theorem(args) -> int:
    from .fields import Grid, SpatialField
    from .locality import TheoremSetup, spectrum_timeline, verify_theorem, write_theorem_csv, write_timeline_csv
    from .solver import SolverConfig

    cfg = resolve(args, ["eps", "k0", "n1", "t_final", "grid_n", "cfl", "out"], THEOREM_DEFAULTS)
    path = _out(cfg)
    grid = Grid(1, cfg["grid_n"], 2 * math.pi)
    p = SpatialField(grid, np.cos(grid.coords()[0]))
    setup = TheoremSetup.from_field(p, cfg["k0"], cfg["eps"], cfg["t_final"])
    reports = verify_theorem(setup, cfg["n1"], SolverConfig(cfg["t_final"], cfl_safety=cfg["cfl"]), richardson=not args.no_richardson)
    write_theorem_csv(path, setup, reports)
    if args.timeline:
        times = list(np.linspace(0.0, cfg["t_final"], args.timeline))
        scfg = SolverConfig(cfg["t_final"], cfl_safety=cfg["cfl"])
        spectra = spectrum_timeline(setup.initial(), setup.medium(), scfg, times)
        write_timeline_csv(str(path) + ".timeline.csv", times, spectra)
    return 0


def cmd_eval(args) -> int:
    from .datagen import MediumSpec, gen_initial, gen_medium, sample_case
    from .fields import Grid
    from .pipeline import error_metrics, predict, reference_step

    cfg = resolve(args, ["model", "grid_n", "alpha", "n_media", "seed", "tau", "out"])
    model = _load_model(cfg)
    meta = model.meta
    grid = Grid(meta.dim, cfg["grid_n"], meta.domain_len)
    path = _out(cfg)
    rid = run_id(cfg, "eval")
    rows = []
    for i in range(cfg["n_media"]):
        mspec, k = sample_case(MediumSpec(alpha=cfg["alpha"]), grid, cfg["seed"], i, (meta.k_min, meta.k_max))
        medium = gen_medium(mspec, grid)
        f = gen_initial(k, grid)
        ref = reference_step(f, medium, meta.t_step)
        m = error_metrics(predict(model, f, None, medium, tau=cfg["tau"]), ref)
        rows.append({"run_id": rid, "index": i, "k": " ".join(map(str, k)), **m})
    write_metrics(path, rows)
    return 0


def cmd_eval_ood(args) -> int:
    from .fields import Grid
    from .pipeline import ood_error_curve, write_ood_csv

    cfg = resolve(args, ["model", "grid_n", "levels", "n_media", "seed", "out"])
    model = _load_model(cfg)
    grid = Grid(model.meta.dim, cfg["grid_n"], model.meta.domain_len)
    path = _out(cfg)
    kind = {"alpha": "in_dist", "delta": "ood_disc"}[args.sweep]
    rows, rho = ood_error_curve(model, cfg["levels"], cfg["n_media"], grid, kind=kind, seed=cfg["seed"])
    write_ood_csv(path, rows, rho)
    log.info("spearman rho %.3f", rho)
    return 0


# ---------------------------------------------------------------------------
# parser

def _flag(p, name, key, help_text, type_=None, **kw):
    default = DESK.get(key)
    if isinstance(default, list):
        default = ",".join(map(str, default))
    suffix = f" (default: {default})" if default is not None else ""
    p.add_argument(name, dest=key, type=type_ or SCHEMA[key], default=None, help=help_text + suffix, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfp", description="Mode-by-mode neural propagation of waves in heterogeneous periodic media.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk", help="default settings (default: desk)")
        p.add_argument("--threads", type=int, default=None, help="BLAS/FFT thread cap; WFP_THREADS overrides")
        p.add_argument("--log-level", default="WARNING", help="logging level (default: WARNING)")
        return p

    def grid_flags(p):
        _flag(p, "--dim", "dim", "spatial dimension", choices=(1, 2))
        _flag(p, "--grid", "grid_n", "points per axis")
        _flag(p, "--domain-len", "domain_len", "domain length")

    def medium_flags(p):
        p.add_argument("--medium", help="field file of c^2 values; otherwise generated from --seed")
        _flag(p, "--alpha", "alpha", "base disturbance strength")
        _flag(p, "--ood", "ood", "medium family: none, disc or strong")
        _flag(p, "--delta", "delta", "jump in the disc family")
        _flag(p, "--seed", "seed", "random seed")

    p = common(sub.add_parser("gen-data", help="build a plane-wave training set"))
    p.set_defaults(func=cmd_gen_data)
    grid_flags(p)
    _flag(p, "--n", "n_samples", "number of records")
    _flag(p, "--alpha", "alpha", "base disturbance strength")
    _flag(p, "--seed", "seed", "random seed")
    _flag(p, "--t-final", "t_final", "evolution time")
    _flag(p, "--rc", "r_c", "medium window radius")
    _flag(p, "--rw", "r_w", "output window radius")
    _flag(p, "--ood", "ood", "medium family: none, disc or strong")
    _flag(p, "--delta", "delta", "jump in the disc family")
    _flag(p, "--cfl", "cfl", "time step as a fraction of dx / c_max")
    _flag(p, "--out", "out", "dataset file")

    p = common(sub.add_parser("train", help="fit the gated network to a dataset"))
    p.set_defaults(func=cmd_train)
    _flag(p, "--data", "data", "dataset file")
    _flag(p, "--hidden", "hidden", "hidden units")
    _flag(p, "--epochs", "epochs", "training epochs")
    _flag(p, "--batch", "batch", "batch size")
    _flag(p, "--lr", "lr", "initial learning rate")
    _flag(p, "--activation", "activation", "osc[:A,B,C] | tanh | lrelu[:slope]")
    _flag(p, "--seed", "seed", "initialization and shuffling seed")
    _flag(p, "--n-test", "n_test", "records held out for the test loss")
    _flag(p, "--tau", "tau", "driving threshold stored with the model")
    _flag(p, "--out", "out", "checkpoint file; the loss CSV goes to OUT.loss.csv")

    p = common(sub.add_parser("infer", help="propagate an initial field with a trained model"))
    p.set_defaults(func=cmd_infer)
    _flag(p, "--model", "model", "checkpoint file")
    p.add_argument("--init-field", help="field file with u(0)")
    p.add_argument("--init-k", type=int, nargs="+", help="unit sine with this frequency instead of --init-field")
    grid_flags(p)
    medium_flags(p)
    _flag(p, "--steps", "steps", "model steps")
    _flag(p, "--tau", "tau", "driving threshold")
    p.add_argument("--reference", help="field file with the reference u for error metrics")
    _flag(p, "--out", "out", "output prefix")

    p = common(sub.add_parser("solve-ref", help="run the finite-difference reference solver"))
    p.set_defaults(func=cmd_solve_ref)
    p.add_argument("--init-field", help="field file with u(0)")
    p.add_argument("--init-k", type=int, nargs="+", help="unit sine with this frequency instead of --init-field")
    p.add_argument("--init-velocity", help="field file with u_t(0) (default: zero)")
    grid_flags(p)
    medium_flags(p)
    _flag(p, "--t-final", "t_final", "final time")
    _flag(p, "--cfl", "cfl", "time step as a fraction of dx / c_max")
    p.add_argument("--dt", type=float, default=None, help="explicit time step (default: from --cfl)")
    p.add_argument("--energy-every", type=int, default=10, help="energy sampling interval in steps (default: 10)")
    _flag(p, "--out", "out", "output prefix")

    p = common(sub.add_parser("verify-theorem", help="scattered amplitudes vs the first-order closed form"))
    p.set_defaults(func=cmd_verify_theorem)
    _flag(p, "--eps", "eps", "perturbation strength")
    _flag(p, "--k0", "k0", "driving frequency")
    _flag(p, "--n1", "n1", "comma-separated target modes")
    p.add_argument("--T", dest="t_final", type=float, default=None, help="final time (default: 0.05)")
    p.add_argument("--n", dest="grid_n", type=int, default=None, help="grid points on [0, 2 pi) (default: 4096)")
    _flag(p, "--cfl", "cfl", "time step as a fraction of dx / c_max")
    p.add_argument("--no-richardson", action="store_true", help="compare the raw solver amplitudes")
    p.add_argument("--timeline", type=int, default=0, metavar="SNAPS", help="also write OUT.timeline.csv with SNAPS spectra (default: 0)")
    _flag(p, "--out", "out", "CSV file")

    p = common(sub.add_parser("eval", help="plane-wave error table against the reference solver"))
    p.set_defaults(func=cmd_eval)
    _flag(p, "--model", "model", "checkpoint file")
    _flag(p, "--grid", "grid_n", "points per axis")
    _flag(p, "--alpha", "alpha", "base disturbance strength")
    _flag(p, "--n-media", "n_media", "number of media")
    _flag(p, "--seed", "seed", "random seed")
    _flag(p, "--tau", "tau", "driving threshold")
    _flag(p, "--out", "out", "CSV file")

    p = common(sub.add_parser("eval-ood", help="error against disturbance level"))
    p.set_defaults(func=cmd_eval_ood)
    _flag(p, "--model", "model", "checkpoint file")
    _flag(p, "--grid", "grid_n", "points per axis")
    _flag(p, "--levels", "levels", "comma-separated sorted levels")
    _flag(p, "--n-media", "n_media", "media per level")
    _flag(p, "--seed", "seed", "random seed")
    p.add_argument("--sweep", choices=("alpha", "delta"), default="alpha", help="what the levels vary (default: alpha)")
    _flag(p, "--out", "out", "CSV file")
    return parser


def _thread_cap(args):
    env = os.environ.get("WFP_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"WFP_THREADS must be an integer, got {env!r}") from None
    return args.threads


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    start = time.time()
    try:
        cap = _thread_cap(args)
        if cap is not None and cap < 1:
            raise ConfigError("thread cap must be positive")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cap), warnings.catch_warnings():
            warnings.simplefilter("default")
            code = args.func(args)
    except Exception as exc:  # one parsable line, no traceback
        name = type(exc).__name__
        print(json.dumps({"error": name, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(name, 1)
    elapsed = time.time() - start
    log.info("%s finished in %.2fs", args.command, elapsed)
    out = getattr(args, "out", None)
    if out:
        # wall-clock facts stay out of the reproducible artifacts
        with open(out + ".runlog", "a") as fh:
            fh.write(json.dumps({"command": args.command, "started": start, "seconds": round(elapsed, 3)}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
