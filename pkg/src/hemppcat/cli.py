"""Command-line interface.

    hemppcat generate            synthetic dataset + ground-truth model
    hemppcat fit                 fit one method to a dataset CSV
    hemppcat evaluate            factor errors of a fitted model vs. the truth
    hemppcat benchmark           factor-error sweep over the group-1 variance
    hemppcat classify            maximum-likelihood labels for a test CSV
    hemppcat ingest-trajectories trajectory CSV -> noisy train/test datasets

Every command takes ``--config`` (a JSON file, see ``CONFIG_SCHEMA``),
``--seed`` and ``--out``.  Command-line flags override the config file.
Outputs contain no timestamps or absolute paths, so two runs with the same
inputs and seed produce identical bytes.

Exit codes: 0 success, 1 usage or configuration error, 2 degenerate fit,
3 I/O or file-format error.
"""

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import kplanes, mppca_fit, mppca_from_assignment
from .driver import INIT_CHOICES, FitOptions, fit
from .evaluation import (
    METHODS,
    aligned_factor_errors,
    classification_report,
    predict,
    run_v1_sweep,
    write_classification_report,
)
from .model import (
    DegenerateFitError,
    Hyper,
    KPlanesState,
    ModelFormatError,
    ModelParams,
    MppcaParams,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)
from .synth import (
    PAPER_SHARES,
    PAPER_SNR_DB,
    SynthConfig,
    add_group_noise,
    generate,
    read_trajectories,
    train_test_split,
)

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE, EXIT_IO = 0, 1, 2, 3

PAPER_SYNTH = {
    "d": 100,
    "k": 3,
    "counts": [[250, 250, 300], [50, 100, 50]],
    "spectrum": [16.0, 9.0, 4.0],
    "variances": [1.0, 1.0],
    "mean_low": 0.0,
    "mean_high": 1.0,
}

# section -> allowed keys with defaults (None: no default)
CONFIG_SCHEMA = {
    "seed": 0,
    "out": None,
    "data": None,
    "method": "hemppcat",
    "methods": list(METHODS),
    "threads": 1,
    "synth": PAPER_SYNTH,
    "hyper": {"J": None, "k": None},
    "fit": {
        "max_iters": 500,
        "rel_tol": 1e-7,
        "init": "mppca",
        "kplanes_iters": 1000,
        "mppca_max_iters": 500,
        "mppca_rel_tol": 1e-6,
    },
    "benchmark": {"v1_grid": [round(1.0 + 0.1 * i, 1) for i in range(31)], "replicates": 25},
    "trajectories": {
        "snr_db": list(PAPER_SNR_DB),
        "shares": list(PAPER_SHARES),
        "train_fraction": 0.8,
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- configuration ---------------------------------------------------------


def _merge(schema, given, where):
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise UsageError(f"unknown config key(s) in {where}: {', '.join(unknown)}")
    out = {}
    for key, default in schema.items():
        if isinstance(default, dict):
            sub = given.get(key, {})
            if not isinstance(sub, dict):
                raise UsageError(f"config section {where}{key} must be an object")
            out[key] = _merge(default, sub, f"{where}{key}.")
        else:
            out[key] = given.get(key, default)
    return out


def load_config(path):
    given = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                given = json.load(fh)
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}: invalid JSON ({err})") from None
        if not isinstance(given, dict):
            raise UsageError(f"{path}: top level must be an object")
    return _merge(CONFIG_SCHEMA, given, "")


def _apply_flags(cfg, args):
    for key in ("seed", "out", "data", "method", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "methods", None):
        cfg["methods"] = args.methods.split(",")
    for key in ("J", "k"):
        value = getattr(args, key, None)
        if value is not None:
            cfg["hyper"][key] = value
    if getattr(args, "init", None) is not None:
        cfg["fit"]["init"] = args.init
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise UsageError("seed must be a non-negative integer")
    if cfg["out"] is None:
        raise UsageError("no output directory (use --out or the 'out' config key)")
    return cfg


def _out_dir(cfg):
    out = Path(cfg["out"])
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    return out


def _synth_config(cfg, seed):
    s = cfg["synth"]
    try:
        return SynthConfig(
            d=s["d"], k=s["k"], counts=s["counts"], spectrum=s["spectrum"],
            variances=s["variances"], seed=seed, mean_low=s["mean_low"], mean_high=s["mean_high"],
        )
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid synth config: {err}") from None


def _fit_options(cfg, seed, init=None):
    f = cfg["fit"]
    try:
        return FitOptions(
            max_iters=f["max_iters"], rel_tol=f["rel_tol"], init=init or f["init"], seed=seed,
            kplanes_iters=f["kplanes_iters"], mppca_max_iters=f["mppca_max_iters"],
            mppca_rel_tol=f["mppca_rel_tol"],
        )
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid fit config: {err}") from None


def _provenance(out, command, cfg, **extra):
    record = {
        "command": command,
        "config": {k: v for k, v in cfg.items() if k not in ("out", "data")},
        "seed": cfg["seed"],
        "versions": {
            "hemppcat": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    record.update(extra)
    _write_json(out / "provenance.json", record)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_data(cfg):
    if cfg["data"] is None:
        raise UsageError("no input data (use --data or the 'data' config key)")
    return cfg["data"]


# -- commands --------------------------------------------------------------


def cmd_generate(cfg):
    out = _out_dir(cfg)
    config = _synth_config(cfg, cfg["seed"])
    dataset, truth = generate(config)
    save_dataset(dataset, out / "data.csv")
    save_model(truth, Hyper(d=config.d, k=config.k, J=config.J, L=config.L), out / "truth.model")
    _provenance(out, "generate", cfg)
    print(f"seed {cfg['seed']}: n={dataset.n} d={dataset.d} counts={list(map(list, config.counts))}")
    return EXIT_OK


def _hyper_for(cfg, dataset):
    J, k = cfg["hyper"]["J"], cfg["hyper"]["k"]
    if J is None or k is None:
        raise UsageError("the number of components J and factors k must be given")
    try:
        return Hyper(d=dataset.d, k=int(k), J=int(J), L=dataset.n_groups)
    except ValueError as err:
        raise UsageError(str(err)) from None


def cmd_fit(cfg):
    out = _out_dir(cfg)
    dataset = load_dataset(_require_data(cfg))
    hyper = _hyper_for(cfg, dataset)
    method, seed = cfg["method"], cfg["seed"]
    init = cfg["fit"]["init"]
    if init not in INIT_CHOICES:
        init = _start_model(init, hyper)
    options = _fit_options(cfg, seed, init)
    if method == "kplanes":
        state = kplanes(dataset, hyper.J, hyper.k, iters=options.kplanes_iters, seed=seed)
        save_model(state, None, out / "model.txt")
        report = {
            "method": method,
            "objective_trace": list(state.objective_trace),
            "iterations": state.iterations,
        }
        status = EXIT_OK
    else:
        if method == "mppca":
            state = kplanes(dataset, hyper.J, hyper.k, iters=options.kplanes_iters, seed=seed)
            start = mppca_from_assignment(dataset, state.assignment, hyper.J, hyper.k)
            params, rep = mppca_fit(
                dataset, hyper.J, hyper.k, options.mppca_max_iters, options.mppca_rel_tol, init=start
            )
        elif method == "hemppcat":
            params, rep = fit(dataset, hyper, options)
        else:
            raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        save_model(params, hyper, out / "model.txt")
        report = dict(rep.to_dict(), method=method)
        status = EXIT_DEGENERATE if rep.stop_reason == "degenerate" else EXIT_OK
    _write_json(out / "report.json", report)
    _provenance(out, "fit", cfg)
    last = report.get("ll_trace", report.get("objective_trace"))[-1]
    print(f"{method}: {report['iterations']} iterations, final objective {last!r}")
    if status == EXIT_DEGENERATE:
        print(f"degenerate fit: {report['message']}", file=sys.stderr)
    return status


def _start_model(path, hyper):
    params, start_hyper = load_model(path)
    if not isinstance(params, ModelParams):
        raise UsageError(f"{path}: a starting point must be a hemppcat model")
    if start_hyper != hyper:
        raise UsageError(f"{path}: starting model does not match the data and J, k")
    return params


def _model_factors(params):
    return params.factors() if isinstance(params, KPlanesState) else params.F


def cmd_evaluate(cfg, model_path, truth_path):
    out = _out_dir(cfg)
    params, hyper = load_model(model_path)
    truth, t_hyper = load_model(truth_path)
    if (hyper.d, hyper.k, hyper.J) != (t_hyper.d, t_hyper.k, t_hyper.J):
        raise UsageError("model and truth differ in d, k or J")
    errors, perm = aligned_factor_errors(_model_factors(params), _model_factors(truth))
    with open(out / "factor_errors.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["component", "matched_component", "factor_error"])
        for j, (err, a) in enumerate(zip(errors, perm)):
            writer.writerow([j + 1, a + 1, repr(float(err))])
    _provenance(out, "evaluate", cfg)
    for j, err in enumerate(errors):
        print(f"component {j + 1}: factor error {err:.6g}")
    return EXIT_OK


def cmd_benchmark(cfg):
    out = _out_dir(cfg)
    base = _synth_config(cfg, cfg["seed"])
    bench = cfg["benchmark"]
    grid, reps = bench["v1_grid"], bench["replicates"]
    if not isinstance(reps, int) or reps < 1:
        raise UsageError("benchmark.replicates must be a positive integer")
    methods = tuple(cfg["methods"])
    if not methods or any(m not in METHODS for m in methods):
        raise UsageError(f"methods must be drawn from {', '.join(METHODS)}")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise UsageError("threads must be a positive integer")
    options = _fit_options(cfg, cfg["seed"])

    def progress(v1, done, total):
        print(f"v1={v1:g} done ({done}/{total})", flush=True)

    try:
        result = run_v1_sweep(
            base, grid, reps, methods, seed=cfg["seed"], options=options,
            threads=cfg["threads"], progress=progress,
        )
    except ValueError as err:
        raise UsageError(str(err)) from None
    if cfg["threads"] > 1:
        for g, v1 in enumerate(result.v1_grid):
            progress(v1, g + 1, len(result.v1_grid))
    result.to_csv(out / "sweep.csv")
    _provenance(out, "benchmark", cfg)
    return EXIT_OK


def cmd_classify(cfg, model_specs):
    out = _out_dir(cfg)
    models = {}
    for spec in model_specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = None, spec
        params, hyper = load_model(path)
        if name is None:
            name = _kind(params)
        if name in models:
            raise UsageError(f"model name {name!r} given twice; use NAME=PATH")
        models[name] = (params, hyper)
    if not models:
        raise UsageError("no models given")
    data_path = _require_data(cfg)
    d_set = {h.d for _, h in models.values()}
    L = max((h.L for p, h in models.values() if _kind(p) == "hemppcat"), default=None)
    test = load_dataset(data_path, n_groups=L, allow_empty_groups=True)
    if d_set != {test.d}:
        raise UsageError(f"test data has dimension {test.d}, models expect {sorted(d_set)}")
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "method", "prediction"])
        for name, (params, _) in models.items():
            for i, p in enumerate(predict(test, params)):
                writer.writerow([i + 1, name, int(p) + 1])
    if test.labels is not None:
        rows = classification_report(test, {name: p for name, (p, _) in models.items()})
        write_classification_report(out / "report.csv", rows)
        for group, name, rate in rows:
            if group == "overall":
                print(f"{name}: overall misclassification {rate:.4f}")
    else:
        print("no labels in test data: wrote predictions only")
    _provenance(out, "classify", cfg, models=sorted(models))
    return EXIT_OK


def _kind(params):
    if isinstance(params, KPlanesState):
        return "kplanes"
    return "mppca" if isinstance(params, MppcaParams) else "hemppcat"


def cmd_ingest(cfg):
    out = _out_dir(cfg)
    traj = read_trajectories(_require_data(cfg))
    t = cfg["trajectories"]
    try:
        dataset, v = add_group_noise(traj, t["snr_db"], t["shares"], cfg["seed"])
        train, test = train_test_split(dataset, t["train_fraction"], cfg["seed"])
    except ValueError as err:
        raise UsageError(str(err)) from None
    save_dataset(dataset, out / "data.csv")
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    _provenance(out, "ingest-trajectories", cfg, noise_variances=[float(x) for x in v])
    print(f"{dataset.n} trajectories of dimension {dataset.d}: "
          f"{train.n} train, {test.n} test, groups {dataset.group_counts().tolist()}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser():
    parser = _Parser(prog="hemppcat", description="Heteroscedastic mixtures of probabilistic PCA.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="existing output directory")
        return p

    common(sub.add_parser("generate", help="write a synthetic dataset and its ground truth"))

    p = common(sub.add_parser("fit", help="fit a model to a dataset CSV"))
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("-J", "--components", dest="J", type=int, help="number of mixture components")
    p.add_argument("-k", "--factors", dest="k", type=int, help="factors per component")
    p.add_argument("--init", help="'mppca', 'kmeanspp' or a hemppcat model file to start from")

    p = common(sub.add_parser("evaluate", help="factor errors of a model against the truth"))
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True)

    p = common(sub.add_parser("benchmark", help="factor-error sweep over the group-1 variance"))
    p.add_argument("--method", dest="methods", help="comma-separated subset of methods")
    p.add_argument("--threads", type=int, help="worker processes (default 1)")

    p = common(sub.add_parser("classify", help="classify a test CSV with fitted models"))
    p.add_argument("--model", action="append", required=True, metavar="[NAME=]PATH",
                   help="model file; repeat for several methods")
    p.add_argument("--data", help="test dataset CSV")

    p = common(sub.add_parser("ingest-trajectories", help="apply the noise protocol to tracks"))
    p.add_argument("--data", help="trajectory CSV (point_id, frame, x, y, body)")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        cfg = _apply_flags(load_config(args.config), args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.model, args.truth)
        if args.command == "benchmark":
            return cmd_benchmark(cfg)
        if args.command == "classify":
            return cmd_classify(cfg, args.model)
        return cmd_ingest(cfg)
    except UsageError as err:
        print(f"hemppcat: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateFitError as err:
        print(f"hemppcat: degenerate fit: {err}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, ModelFormatError) as err:
        print(f"hemppcat: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"hemppcat: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
