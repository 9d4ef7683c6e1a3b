"""
Command-line front end: ``operon {generate,train,eval,predict,sweep,cost}``.

Every command accepts ``--config file.json``; explicit flags override values
from the file. A provenance JSON holding the fully resolved configuration is
written next to the outputs and can be fed back through ``--config`` to rerun
the command.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import GENERATORS, OperatorDataset, gen_advection, gen_burgers, gen_calculus_pair, gen_darcy
from .data.grf import GrfConfig, grf_sample
from .errors import DataError, OperonError, TrainingAborted
from .kernels import SeparableKernelParams
from .means import MeanArchitecture
from .metrics import inference_flops, relative_l2, relative_l2_per_sample
from .model import fit, load_model, nll_kron, predict, save_model
from .training import InitHeuristics, TrainConfig, TrainMode, prepare_features, train, write_history_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MODES = ("zero-shot", "one-shot", "zero-mean", "nn-mean", "physics")
MEANS = ("zero", "mlp", "branch-trunk")

GENERATE_DEFAULTS = {"seed": 0}
TRAIN_DEFAULTS = {
    "mode": "zero-mean", "mean": "zero", "seed": 0, "split_seed": 0, "beta_y": 1e3, "beta_phi": 1e-2,
    "sigma2": 1.0, "optimize_beta_y": False, "mse": False, "paired": False, "input_scale": 1.0,
    "hidden": [64, 64], "branch": [64, 64], "trunk": [64, 64], "latent": 32, "out": "run",
}
SWEEP_DEFAULTS = {"split_seed": 0, "beta_phi": "1e-2", "beta_y": "1e3", "sigma2": "1", "input_scale": 1.0,
                  "out": "sweep.csv"}
COST_DEFAULTS = {"d": 1, "mean": "zero", "hidden": [64, 64], "branch": [64, 64], "trunk": [64, 64], "latent": 32}


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _widths(text):
    if text is None or isinstance(text, list):
        return text
    return [int(w) for w in str(text).split(",") if w.strip()]


def _scale(value):
    if value in (None, "median"):
        return value
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--input-scale must be a positive number or 'median', got {value!r}") from None


def _grid(text):
    """Comma list of values, or ``log:lo:hi:n`` for ``n`` log-spaced values ``10**lo .. 10**hi``."""
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        return [float(v) for v in text]
    text = str(text)
    if text.startswith("log:"):
        _, lo, hi, n = text.split(":")
        return [float(v) for v in np.logspace(float(lo), float(hi), int(n))]
    return [float(v) for v in text.split(",") if v.strip()]


def _resolve(args, defaults):
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        cfg.update(loaded.get("config", loaded))
    for k, v in vars(args).items():
        if k in ("func", "config", "command") or v is None:
            continue
        cfg[k] = v
    cfg["command"] = args.command
    return cfg


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _provenance(cfg, artifacts):
    return {
        "version": __version__, "command": cfg["command"],
        "config": {k: v for k, v in cfg.items() if k != "command"},
        "seeds": {k: cfg[k] for k in ("seed", "split_seed") if k in cfg},
        "artifacts": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in artifacts.items()},
    }


# ------------------------------------------------------------------ generate

def _generate_dataset(cfg):
    problem = cfg["problem"]
    if cfg.get("n") is None:
        raise UsageError("generate requires --n")
    n, seed = int(cfg["n"]), int(cfg["seed"])
    ls = cfg.get("length_scale")
    if problem == "advection":
        return gen_advection(n, int(cfg.get("p") or 40), seed)
    if problem == "burgers-periodic":
        p = int(cfg.get("p") or 128)
        return gen_burgers("periodic", n, p, int(cfg.get("q") or p), cfg.get("nu") or 0.1,
                           cfg.get("resolution"), seed, ls)
    if problem == "burgers-dirichlet":
        q = cfg.get("q") or 144
        if isinstance(q, str) and "x" in q:
            q = tuple(int(a) for a in q.split("x"))
        return gen_burgers("dirichlet", n, int(cfg.get("p") or 100), q if isinstance(q, tuple) else int(q),
                           cfg.get("nu") or 0.1, cfg.get("resolution"), seed, ls)
    if problem == "darcy":
        return gen_darcy(n, int(cfg.get("grid") or 29), seed, ls or 0.15)
    if problem == "calculus-pair":
        return gen_calculus_pair(n, int(cfg.get("p") or 64), seed, ls or 0.2)
    raise UsageError(f"unknown problem {problem!r}; choose from {', '.join(GENERATORS)}")


def cmd_generate(cfg):
    ds = _generate_dataset(cfg)
    out = Path(cfg.get("out") or f"{cfg['problem']}.opds")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    side = {"metadata": ds.metadata, "shapes": {"U": ds.U.shape, "Y": ds.Y.shape, "V": ds.V.shape},
            "provenance": _provenance(cfg, {"dataset": out})}
    _write_json(str(out) + ".json", side)
    print(f"wrote {out}: N={ds.N} p={ds.p} q={ds.q} d={ds.d} S={ds.S}")
    return EXIT_OK


# --------------------------------------------------------------------- train

def _load_dataset(path):
    if not path:
        raise UsageError("--dataset is required")
    try:
        return OperatorDataset.load(path)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc


def _splits(cfg):
    ds = _load_dataset(cfg.get("dataset"))
    if cfg.get("test_dataset"):
        return ds, _load_dataset(cfg["test_dataset"])
    n_train = int(cfg.get("n_train") or max(1, round(0.8 * ds.N)))
    if n_train >= ds.N:
        raise UsageError(f"--n-train {n_train} leaves no test samples (N={ds.N})")
    return ds.split(n_train, int(cfg.get("split_seed", 0)))


def _arch(cfg, p, d, S):
    kind = cfg.get("mean", "zero")
    if kind == "zero":
        return MeanArchitecture.zero(p, d, S)
    if kind == "mlp":
        return MeanArchitecture.mlp(p, d, tuple(_widths(cfg["hidden"])), outputs=S)
    if kind == "branch-trunk":
        return MeanArchitecture.branch_trunk(p, d, tuple(_widths(cfg["branch"])), tuple(_widths(cfg["trunk"])),
                                             int(cfg["latent"]), outputs=S)
    raise UsageError(f"unknown mean {kind!r}")


def _metrics(model, test, train_time, trainable, frozen, arch):
    t0 = time.perf_counter()
    pred = predict(model, test.U, test.Y)
    infer = time.perf_counter() - t0
    truth = test.targets()
    return {
        "relative_l2": relative_l2(pred, truth).tolist(),
        "per_sample": relative_l2_per_sample(pred, truth).tolist(),
        "train_time": train_time, "inference_time": infer,
        "n_params": {"trainable": int(trainable), "frozen": int(frozen)},
        "flops": inference_flops(model.N, model.p, test.q, model.d, None if arch.variant == "zero" else arch),
        "jitter_used": model.jitter_used,
    }


def _physics_problem(cfg, train_ds, pcfg):
    from .physics import PdeProblem

    meta = train_ds.metadata
    if meta.get("name") != "burgers-dirichlet":
        raise UsageError("physics mode needs a burgers-dirichlet dataset")
    grid = train_ds.input_grid[:, 0]
    if pcfg.get("physics_inputs"):
        U_pi = _load_dataset(pcfg["physics_inputs"]).U
    else:
        gcfg = GrfConfig(meta.get("length_scale", 0.2), meta.get("variance", 1.0), grid,
                         int(pcfg.get("physics_seed", int(cfg["seed"]) + 1000)), pinning=(0.0, 1.0))
        U_pi = grf_sample(gcfg, int(pcfg.get("n_pi", 50)))
    return PdeProblem(U_pi, grid, nu=float(pcfg.get("nu", meta.get("nu", 0.1))),
                      n_pde=int(pcfg.get("n_pde", 100**2)), n_bc=int(pcfg.get("n_bc", 100)),
                      n_ic=int(pcfg.get("n_ic", 100)))


def _run_training(cfg, train_ds, test, mode, mse, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    init = InitHeuristics(float(cfg["beta_y"]), float(cfg["beta_phi"]), float(cfg["sigma2"]))
    arch_kind = cfg.get("mean", "zero")
    if mode in ("nn-mean", "physics") and arch_kind == "zero":
        raise UsageError(f"{mode} mode requires a trainable mean (--mean mlp or branch-trunk)")
    if mode in ("zero-shot", "one-shot", "zero-mean") and arch_kind != "zero":
        raise UsageError(f"{mode} mode uses a zero mean; drop --mean {arch_kind}")
    log_path = out_dir / "loss.csv"
    t0 = time.perf_counter()
    if mode == "physics":
        from .physics import LossWeights, PhysicsConfig, train_physics_informed

        pcfg = cfg.get("physics_config") or {}
        if isinstance(pcfg, str):
            with open(pcfg) as fh:
                pcfg = json.load(fh)
        problem = _physics_problem(cfg, train_ds, pcfg)
        arch = _arch(cfg, train_ds.p, train_ds.d, train_ds.S)
        weights = LossWeights(pcfg.get("alpha_BC", 1.0), pcfg.get("alpha_IC", 1.0), pcfg.get("alpha_MLE", 1.0),
                              pcfg.get("lambda", 0.9))
        pc = PhysicsConfig(int(cfg.get("epochs") or 1000), float(cfg.get("lr") or 1e-3), int(cfg["seed"]),
                           weights, tuple(pcfg.get("adapt", ("bc", "ic", "mle"))), mse, log_path=str(log_path))
        model, history = train_physics_informed(train_ds, problem, arch, pc, init)
        trainable, frozen = arch.n_params, train_ds.p + 1 + train_ds.d
    else:
        config = TrainConfig(mode=mode, epochs=cfg.get("epochs") if mode not in ("zero-shot", "one-shot") else None,
                             lr=cfg.get("lr"), seed=int(cfg["seed"]), optimize_beta_y=bool(cfg["optimize_beta_y"]),
                             mse=mse, pca=cfg.get("pca"), input_scale=_scale(cfg["input_scale"]),
                             log_path=str(log_path))
        feats_p = cfg["pca"] if cfg.get("pca") else train_ds.p
        arch = _arch(cfg, feats_p, train_ds.d, train_ds.S)
        model, history = train(train_ds, config, init, arch if mode == "nn-mean" else None)
        if mode == "nn-mean":
            trainable, frozen = arch.n_params, model.p + 1 + model.d
        else:
            trainable = model.p + 1 + (model.d if cfg["optimize_beta_y"] else 0)
            frozen = 0 if cfg["optimize_beta_y"] else model.d
    train_time = time.perf_counter() - t0
    model_path = out_dir / "model.opgp"
    save_model(model_path, model, {"mode": mode})
    metrics = _metrics(model, test, train_time, trainable, frozen, arch)
    metrics.update(mode=mode, mse=mse, epochs=len(history) - 1, final_loss=history[-1]["total"])
    _write_json(out_dir / "metrics.json", metrics)
    return metrics, {"model": model_path, "loss": log_path, "metrics": out_dir / "metrics.json"}


def cmd_train(cfg):
    mode = cfg["mode"]
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}")
    train_ds, test = _splits(cfg)
    out = Path(cfg["out"])
    metrics, artifacts = _run_training(cfg, train_ds, test, mode, bool(cfg["mse"]), out)
    report = {"primary": metrics}
    if cfg.get("paired"):
        if mode == "physics":
            pm, pa = _run_training(cfg, train_ds, test, "nn-mean", bool(cfg["mse"]), out / "paired")
        elif mode == "nn-mean":
            pm, pa = _run_training(cfg, train_ds, test, "nn-mean", not cfg["mse"], out / "paired")
        else:
            raise UsageError("--paired applies to physics and nn-mean modes")
        artifacts.update({f"paired_{k}": v for k, v in pa.items()})
        report["paired"] = pm
        report["ratio"] = [a / b if b else float("nan") for a, b in zip(metrics["relative_l2"], pm["relative_l2"])]
        _write_json(out / "comparison.json", report)
        artifacts["comparison"] = out / "comparison.json"
    _write_json(out / "provenance.json", _provenance(cfg, artifacts))
    print(json.dumps({k: v for k, v in metrics.items() if k not in ("per_sample",)}, default=_jsonable))
    if "ratio" in report:
        print(json.dumps({"paired_relative_l2": report["paired"]["relative_l2"], "ratio": report["ratio"]}))
    return EXIT_OK


# ------------------------------------------------------------- eval/predict

def _load_model(path):
    if not path:
        raise UsageError("--model is required")
    try:
        return load_model(path)
    except FileNotFoundError as exc:
        raise DataError(f"model not found: {path}") from exc


def cmd_eval(cfg):
    model = _load_model(cfg.get("model"))
    test = _load_dataset(cfg.get("dataset"))
    arch = model.mean.arch
    m = _metrics(model, test, 0.0, arch.n_params, model.p + 1 + model.d, arch)
    out = cfg.get("out")
    if out:
        _write_json(out, m)
        _write_json(str(out) + ".provenance.json", _provenance(cfg, {"metrics": out}))
    print(json.dumps({k: v for k, v in m.items() if k != "per_sample"}, default=_jsonable))
    return EXIT_OK


def cmd_predict(cfg):
    from .data.container import read_csv_array

    model = _load_model(cfg.get("model"))
    if cfg.get("inputs"):
        U = read_csv_array(cfg["inputs"])
        Ys = read_csv_array(cfg["points"]) if cfg.get("points") else model.Y
    else:
        ds = _load_dataset(cfg.get("dataset"))
        U, Ys = ds.U, ds.Y
    pred = predict(model, U, Ys)  # (n, m, S)
    flat = pred.transpose(0, 2, 1).reshape(pred.shape[0], -1)
    out = cfg.get("out")
    if out:
        np.savetxt(out, flat, delimiter=",", fmt="%.17g")
        _write_json(str(out) + ".provenance.json", _provenance(cfg, {"predictions": out}))
    else:
        np.savetxt(sys.stdout, flat, delimiter=",", fmt="%.17g")
    return EXIT_OK


# --------------------------------------------------------------------- sweep

def sweep_rows(train_ds, test, beta_phi, beta_y, sigma2, input_scale=1.0):
    """Zero-shot loss and test error for every grid cell, ordered ``beta_phi > beta_y > sigma2``."""
    # features stay fixed across cells; "median" resolves against the default initial beta_phi
    feats, transform = prepare_features(train_ds, TrainConfig(mode="zero-shot", input_scale=input_scale))
    rows = []
    for bp in beta_phi:
        for by in beta_y:
            for s2 in sigma2:
                kernel = InitHeuristics(by, bp, s2).kernel(feats.p, feats.d)
                try:
                    loss = nll_kron(feats, kernel).total
                    model = fit(feats, kernel, transform=transform)
                    err = float(np.mean(relative_l2(predict(model, test.U, test.Y), test.targets())))
                except (ArithmeticError, OperonError):
                    loss, err = float("nan"), float("nan")
                rows.append({"beta_phi": bp, "beta_y": by, "sigma2": s2, "loss": loss, "error": err})
    return rows


def cmd_sweep(cfg):
    train_ds, test = _splits(cfg)
    rows = sweep_rows(train_ds, test, _grid(cfg["beta_phi"]), _grid(cfg["beta_y"]), _grid(cfg["sigma2"]),
                      _scale(cfg["input_scale"]))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_history_csv(out, rows, ["beta_phi", "beta_y", "sigma2", "loss", "error"])
    _write_json(str(out) + ".provenance.json", _provenance(cfg, {"sweep": out}))
    best = min((r for r in rows if np.isfinite(r["error"])), key=lambda r: r["error"], default=None)
    print(f"wrote {len(rows)} rows to {out}; best error {best['error'] if best else float('nan'):.4g}")
    return EXIT_OK


# ---------------------------------------------------------------------- cost

def cmd_cost(cfg):
    for k in ("N", "n", "m"):
        if cfg.get(k) is None:
            raise UsageError(f"cost requires --{k}")
    d = int(cfg["d"])
    arch = None
    if cfg["mean"] != "zero":
        arch = _arch(cfg, int(cfg["n"]), d, 1)
    res = inference_flops(int(cfg["N"]), int(cfg["n"]), int(cfg["m"]), d, arch)
    for name, v in res["terms"].items():
        print(f"{name:>26s} {v:>16,d}")
    print(f"{'total':>26s} {res['total']:>16,d}")
    if cfg.get("out"):
        _write_json(cfg["out"], res)
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="operon", description="GP operator learning")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with default values (flags override)")
        sp.add_argument("--out")

    g = sub.add_parser("generate", help="generate a dataset")
    g.add_argument("problem", choices=GENERATORS)
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--q")
    g.add_argument("--grid", type=int, help="darcy nodes per side")
    g.add_argument("--nu", type=float)
    g.add_argument("--resolution", type=int)
    g.add_argument("--length-scale", type=float)
    g.add_argument("--seed", type=int)
    common(g)
    g.set_defaults(func=cmd_generate, defaults=GENERATE_DEFAULTS)

    def data_flags(sp):
        sp.add_argument("--dataset")
        sp.add_argument("--test-dataset")
        sp.add_argument("--n-train", type=int)
        sp.add_argument("--split-seed", type=int)
        sp.add_argument("--input-scale", help="global feature scale, or 'median' for the median-distance heuristic")

    def arch_flags(sp):
        sp.add_argument("--mean", choices=MEANS)
        sp.add_argument("--hidden", help="comma-separated MLP widths")
        sp.add_argument("--branch", help="comma-separated branch widths")
        sp.add_argument("--trunk", help="comma-separated trunk widths")
        sp.add_argument("--latent", type=int)

    t = sub.add_parser("train", help="train a model")
    data_flags(t)
    arch_flags(t)
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--beta-y", type=float)
    t.add_argument("--beta-phi", type=float)
    t.add_argument("--sigma2", type=float)
    t.add_argument("--optimize-beta-y", action="store_true", default=None)
    t.add_argument("--pca", type=int)
    t.add_argument("--mse", action="store_true", default=None)
    t.add_argument("--physics-config")
    t.add_argument("--paired", action="store_true", default=None,
                   help="also run the comparison configuration (data-only for physics, MSE/MLE swap for nn-mean)")
    common(t)
    t.set_defaults(func=cmd_train, defaults=TRAIN_DEFAULTS)

    e = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    e.add_argument("--model")
    e.add_argument("--dataset")
    common(e)
    e.set_defaults(func=cmd_eval, defaults={})

    pr = sub.add_parser("predict", help="predict with a saved model")
    pr.add_argument("--model")
    pr.add_argument("--dataset")
    pr.add_argument("--inputs", help="CSV of raw inputs, one per row")
    pr.add_argument("--points", help="CSV of query points")
    common(pr)
    pr.set_defaults(func=cmd_predict, defaults={})

    s = sub.add_parser("sweep", help="zero-shot loss and error over a kernel parameter grid")
    data_flags(s)
    s.add_argument("--beta-phi", help="values, comma list or log:lo:hi:n")
    s.add_argument("--beta-y")
    s.add_argument("--sigma2")
    common(s)
    s.set_defaults(func=cmd_sweep, defaults=SWEEP_DEFAULTS)

    c = sub.add_parser("cost", help="inference FLOPs per test function")
    c.add_argument("--N", type=int)
    c.add_argument("--n", type=int)
    c.add_argument("--m", type=int)
    c.add_argument("--d", type=int)
    arch_flags(c)
    common(c)
    c.set_defaults(func=cmd_cost, defaults=COST_DEFAULTS)
    return p


def _thread_limit():
    n = os.environ.get("OPERON_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    func, defaults = args.func, args.defaults
    del args.defaults
    try:
        cfg = _resolve(args, defaults)
        with _thread_limit():
            return func(cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"operon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"operon: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as exc:
        print(f"operon: training aborted after {len(exc.history)} epochs: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, OperonError) as exc:
        print(f"operon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"operon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
