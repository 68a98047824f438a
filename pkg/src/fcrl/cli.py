"""Command-line entry point: ``fcrl <command> [flags]``.

Every command writes ``manifest.json`` next to its outputs with the full
argument snapshot, input hashes, package version and wall-clock time.
Flags may also come from ``--config FILE`` (``key=value`` lines, keys are
flag names without dashes); explicit flags win over the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import data as D
from . import evaluate as E
from . import frontier as F
from . import model as M
from . import theory as T
from . import train as TR
from .numeric import DimensionError, NumericError

log = logging.getLogger("fcrl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir: Path, args: argparse.Namespace, datasets: dict[str, D.Dataset],
                   outputs: list[Path], started: float, extra: dict | None = None) -> Path:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "command": args.command,
        "config": config,
        "datasets": {k: ds.content_hash() for k, ds in datasets.items()},
        "code_version": _version(),
        "seed": getattr(args, "seed", None),
        "outputs": sorted(str(p) for p in outputs),
        "duration_seconds": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _train_config(args) -> TR.TrainConfig:
    return TR.TrainConfig(beta=args.beta, lam=args.lam, d=args.d, hidden=args.hidden,
                          predictor_hidden=args.predictor_hidden, epochs=args.epochs, lr=args.lr,
                          batch_size=args.batch_size, seed=args.seed, objective=args.objective)


def _beta_tag(beta: float) -> str:
    return f"{beta:.6g}"


def _checkpoint_paths(items: list[str]) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.glob("*.json") if q.name != MANIFEST))
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(f"no such checkpoint: {p}")
    if not paths:
        raise D.DataError("no checkpoints found")
    return paths


def _checkpoint_beta(path: Path, extra: dict) -> float | None:
    config = extra.get("config") if isinstance(extra, dict) else None
    return float(config["beta"]) if config and "beta" in config else None


def _probe_specs(args) -> list[E.ProbeSpec]:
    kinds = ["logreg", "mlp1"] if args.probe == "both" else [args.probe]
    pres = ["none", "standard_scale"] if args.preprocess == "both" else [args.preprocess]
    return [E.ProbeSpec(kind=k, hidden=args.probe_hidden, seeds=args.probe_seeds, preprocess=pp)
            for k in kinds for pp in pres]


# commands


def cmd_synth(args) -> int:
    started = time.time()
    spec = D.SynthSpec(mode=args.mode, n=args.n, p=args.p, pi=args.pi, rho_yc=args.rho, noise=args.noise,
                       seed=args.seed)
    full = D.generate_synthetic(spec)
    train, test = D.train_test_split(full, args.test_fraction, args.seed)
    out = Path(args.out)
    paths = [out / "train.csv", out / "test.csv"]
    D.save_csv(train, paths[0])
    D.save_csv(test, paths[1])
    write_manifest(out, args, {"train": train, "test": test}, paths, started,
                   {"plugin_mi_y_c": D.plugin_mi(full.y, full.c)})
    print(f"wrote {paths[0]} ({train.n} rows) and {paths[1]} ({test.n} rows)")
    return EXIT_OK


def cmd_prepare_adult(args) -> int:
    started = time.time()
    raw = Path(args.raw_dir)
    train, test = D.preprocess_adult(raw / "adult.data", raw / "adult.test", out_dir=args.out)
    out = Path(args.out)
    write_manifest(out, args, {"train": train, "test": test}, [out / "adult_train.csv", out / "adult_test.csv"],
                   started)
    print(f"adult: train {train.n} x {train.p}, test {test.n} x {test.p}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    train = D.load_csv(args.train)
    config = _train_config(args)
    result = TR.train(train, config)
    out = Path(args.out)
    paths = [out / "model.json", out / "trace.csv"]
    TR.save_checkpoint(result, paths[0])
    TR.write_trace(result.trace, paths[1])
    write_manifest(out, args, {"train": train}, paths, started, {"epochs_total": result.epochs_completed})
    last = result.trace[-1]
    print(f"beta {config.beta}: label {last['label_loss']:.4f} rate {last['rate']:.4f} "
          f"contrastive {last['contrastive']:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.time()
    train = D.load_csv(args.train)
    if args.betas:
        betas = sorted(float(b) for b in args.betas.split(","))
    elif args.grid_points:
        betas = TR.log_beta_grid(args.grid_points)
    else:
        betas = TR.default_beta_grid()
    sweep_cfg = TR.SweepConfig(betas=betas, warm_start=args.warm_start, finetune_epochs=args.finetune_epochs)
    result = TR.sweep(train, _train_config(args), sweep_cfg, jobs=args.jobs)
    out = Path(args.out)
    paths = []
    for entry in result.entries:
        tag = _beta_tag(entry.beta)
        ck, tr = out / f"beta_{tag}.json", out / "traces" / f"beta_{tag}.csv"
        TR.save_checkpoint(entry.result, ck)
        TR.write_trace(entry.result.trace, tr)
        paths += [ck, tr]
    write_manifest(out, args, {"train": train}, paths, started,
                   {"betas": betas, "epochs_total": result.total_epochs})
    print(f"{len(betas)} checkpoints, {result.total_epochs} epochs total")
    return EXIT_OK


def _eval_rows(args, target: str, specs: list[E.ProbeSpec]):
    train, test = D.load_csv(args.train), D.load_csv(args.test)
    rows = []
    if args.raw_features:
        for spec in specs:
            rows += E.result_rows(E.evaluate(None, train, test, spec, target), checkpoint="raw_features")
        return train, test, rows
    for path in _checkpoint_paths(args.checkpoints):
        model, extra = M.load_model(path)
        if model.p != train.p:
            raise DimensionError(f"{path}: checkpoint expects {model.p} features, data has {train.p}")
        beta = _checkpoint_beta(path, extra)
        for spec in specs:
            res = E.evaluate(model, train, test, spec, target, mean_mode=args.mean_mode, seed=args.seed)
            rows += E.result_rows(res, checkpoint=str(path), beta=beta)
    return train, test, rows


def cmd_eval(args) -> int:
    started = time.time()
    if not args.raw_features and not args.checkpoints:
        raise UsageError("eval: give --checkpoints or --raw-features")
    train, test, rows = _eval_rows(args, args.target, _probe_specs(args))
    out = Path(args.out)
    E.write_results(rows, out)
    write_manifest(out.parent, args, {"train": train, "test": test}, [out], started)
    for r in rows:
        if r["aggregate"]:
            print(f"{Path(r['checkpoint']).name} {r['probe']} {r['preprocess']}: "
                  f"acc {r['accuracy']:.4f} dDP {r['delta_dp']:.4f}")
    return EXIT_OK


def cmd_leakage(args) -> int:
    args.target, args.preprocess = "c", "both"
    return cmd_eval(args)


def _read_frontier_inputs(path, probe: str | None) -> list[F.TradeoffPoint]:
    """Trade-off points from an eval results CSV (aggregate rows) or a points CSV."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        return []
    if "aggregate" not in header:
        return F.read_points(path)
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                if row["aggregate"] != "1" or row["target"] != "y":
                    continue
                if probe and row["probe"] != probe:
                    continue
                beta = float(row["beta"]) if row.get("beta") else float("nan")
                points.append(F.TradeoffPoint(beta, float(row["accuracy"]), float(row["delta_dp"]),
                                              row["checkpoint"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise F.FrontierError(f"{path}:{lineno}: {exc}") from None
    return points


def _frontier_spec(args) -> F.FrontierSpec | None:
    if args.test:
        spec = F.FrontierSpec.from_labels(*_labels(args.test), grid=args.grid)
        if args.delta_data is not None:
            spec.delta_data = args.delta_data
        if args.baseline is not None:
            spec.baseline = args.baseline
        return spec
    return None


def _labels(path):
    ds = D.load_csv(path)
    return ds.y, ds.c, ds.K


def _area(args, points):
    spec = _frontier_spec(args)
    if spec is not None:
        return F.aopac(points, spec), spec
    if args.delta_data is None or args.baseline is None:
        raise UsageError("need --test, or both --delta-data and --baseline")
    front = F.pareto_front(points, args.delta_data)
    raw = F.step_area([p.parity for p in front], [p.accuracy for p in front], args.delta_data, args.baseline)
    return F.AopacResult(raw, None, None, front, len(points) - len(front)), None


def cmd_frontier(args) -> int:
    started = time.time()
    points = _read_frontier_inputs(args.results, args.probe)
    if not points:
        log.warning("no trade-off points in %s; area is 0", args.results)
    res, spec = _area(args, points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "pareto.csv"]
    F.write_points(res.pareto_points, paths[0])
    if spec is not None:
        paths.append(out / "lp_frontier.csv")
        grid = np.linspace(0.0, spec.delta_data, spec.grid)
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parity", "optimal_accuracy"])
            for d, a in zip(grid, spec.optimal_accuracy(grid)):
                w.writerow([repr(float(d)), repr(float(a))])
    write_manifest(out, args, {}, paths, started)
    print(f"{len(res.pareto_points)} Pareto points, raw area {res.raw_area:.6f}")
    return EXIT_OK


def cmd_aopac(args) -> int:
    started = time.time()
    points = _read_frontier_inputs(args.results, args.probe)
    if not points:
        log.warning("no trade-off points in %s; area is 0", args.results)
    res, _ = _area(args, points)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(res.to_json() + "\n", encoding="utf-8")
    write_manifest(out.parent, args, {}, [out], started)
    norm = "n/a (no --test)" if res.normalized_area is None else f"{res.normalized_area:.6f}"
    print(f"raw area {res.raw_area:.6f}, normalized {norm}")
    return EXIT_OK


def cmd_bound_check(args) -> int:
    started = time.time()
    train, test = D.load_csv(args.train), D.load_csv(args.test)
    models = {}
    for path in _checkpoint_paths(args.checkpoints):
        models[str(path)] = M.load_model(path)[0]
    specs = [E.ProbeSpec(kind=k, hidden=args.probe_hidden, seeds=args.probe_seeds)
             for k in (["logreg", "mlp1"] if args.probe == "both" else [args.probe])]
    report = T.bound_check(models, train, test, specs, seed=args.seed, n_passes=args.passes,
                           refit_epochs=args.refit_epochs)
    out = Path(args.out)
    T.write_bound_report(report, out)
    write_manifest(out.parent, args, {"train": train, "test": test}, [out], started,
                   {"violations": len(report.violations), "priors": report.priors})
    print(f"{len(report.rows)} rows, {len(report.violations)} flagged")
    return EXIT_OK


# parser


def _add_training_flags(p):
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--d", type=int, default=8, help="representation size")
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--predictor-hidden", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--objective", choices=["O1", "O2"], default="O2",
                   help="O2 conditions the label predictor on c, O1 does not")


def _add_probe_flags(p, preprocess=True):
    p.add_argument("--probe", choices=["logreg", "mlp1", "both"], default="mlp1")
    p.add_argument("--probe-seeds", type=int, default=5)
    p.add_argument("--probe-hidden", type=int, default=50)
    if preprocess:
        p.add_argument("--preprocess", choices=["standard_scale", "none", "both"], default="standard_scale")


def _add_area_flags(p):
    p.add_argument("--results", required=True, help="eval results CSV or beta,accuracy,parity CSV")
    p.add_argument("--test", help="test CSV; supplies data parity, baseline and the LP normalizer")
    p.add_argument("--probe", help="keep only rows of this probe kind")
    p.add_argument("--delta-data", type=float)
    p.add_argument("--baseline", type=float)
    p.add_argument("--grid", type=int, default=F.NORMALIZER_GRID)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fcrl", description="Fair contrastive representation learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value file; explicit flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic train/test pair")
    p.add_argument("--mode", choices=["gaussian_bias", "xor"], default="gaussian_bias")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--p", type=int, default=8)
    p.add_argument("--pi", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--out", required=True)

    p = command("prepare-adult", cmd_prepare_adult, "preprocess the raw UCI Adult files")
    p.add_argument("--raw-dir", required=True, help="directory with adult.data and adult.test")
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train one model")
    _add_training_flags(p)
    p.add_argument("--out", required=True)

    p = command("sweep", cmd_sweep, "train one model per beta")
    _add_training_flags(p)
    p.add_argument("--betas", help="comma-separated beta values")
    p.add_argument("--grid-points", type=int, help="log-spaced grid from 0.005 to 1")
    p.add_argument("--warm-start", action="store_true")
    p.add_argument("--finetune-epochs", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    for name, func, help_text in (("eval", cmd_eval, "probe representations for y (or c)"),
                                  ("leakage", cmd_leakage, "probe representations for c, scaled and unscaled")):
        p = command(name, func, help_text)
        p.add_argument("--checkpoints", nargs="*", default=[], help="checkpoint files or directories")
        p.add_argument("--raw-features", action="store_true", help="probe X directly (no encoder)")
        p.add_argument("--train", required=True)
        p.add_argument("--test", required=True)
        p.add_argument("--mean-mode", action="store_true", help="use the encoder mean instead of a sample")
        _add_probe_flags(p, preprocess=(name == "eval"))
        if name == "eval":
            p.add_argument("--target", choices=["y", "c"], default="y")
        p.add_argument("--out", required=True, help="results CSV")

    p = command("frontier", cmd_frontier, "Pareto points and the LP-optimal frontier")
    _add_area_flags(p)
    p.add_argument("--out", required=True, help="output directory")

    p = command("aopac", cmd_aopac, "area over the parity-accuracy curve")
    _add_area_flags(p)
    p.add_argument("--out", required=True, help="output JSON")

    p = command("bound-check", cmd_bound_check, "compare parity-implied MI with the model's MI estimate")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    _add_probe_flags(p, preprocess=False)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--refit-epochs", type=int, default=0)
    p.add_argument("--out", required=True, help="report CSV")
    return parser


def _scan(argv: list[str]) -> tuple[str | None, str | None]:
    """Command name and --config value, found before full parsing."""
    command = config = None
    for i, tok in enumerate(argv):
        if command is None and not tok.startswith("-"):
            command = tok
        elif tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def parse_args(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse flags, taking defaults from a key=value config file when given."""
    command, config = _scan(argv)
    choices = parser._subparsers._group_actions[0].choices
    if config and command in choices:
        sub = choices[command]
        actions = {}
        for a in sub._actions:
            for opt in a.option_strings:
                actions[opt.lstrip("-").replace("-", "_")] = a
            actions.setdefault(a.dest, a)
        defaults = {}
        for lineno, raw in enumerate(Path(config).read_text(encoding="utf-8").splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{config}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            action = actions.get(key.replace("-", "_"))
            if action is None or action.dest in ("config", "help"):
                raise UsageError(f"{config}:{lineno}: unknown key {key!r}")
            if isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = value.lower() in ("1", "true", "yes")
            elif action.nargs in ("*", "+"):
                defaults[action.dest] = value.split()
            else:
                try:
                    defaults[action.dest] = action.type(value) if action.type else value
                except ValueError:
                    raise UsageError(f"{config}:{lineno}: bad value for {key}: {value!r}") from None
                if action.choices and defaults[action.dest] not in action.choices:
                    raise UsageError(f"{config}:{lineno}: {key} must be one of {list(action.choices)}")
            action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parse_args(parser, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"usage error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, TR.TrainingError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (D.DataError, M.CheckpointError, F.FrontierError, E.MetricError, DimensionError,
            FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
