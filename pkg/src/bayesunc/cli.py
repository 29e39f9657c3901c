"""Command-line entry point: ``bayesunc {run,sweep,eval,plot}``.

Exit codes: 0 success, 1 config error, 2 numerical failure,
3 invariant violation under ``--self-check``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .autodiff import NonFiniteError
from .experiment import (
    CLASSIFICATION_COLUMNS,
    REGRESSION_COLUMNS,
    AcceptanceViolation,
    ConfigError,
    emit_table,
    format_value,
    load_config,
    run_experiment,
)
from .plotting import emit_plot
from .predict import read_dump
from .training import TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VIOLATION = 0, 1, 2, 3


def _read_config(path: Path) -> dict:
    try:
        return load_config(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None


def cmd_run(args) -> int:
    raw = _read_config(Path(args.config))
    art = run_experiment(raw, out_dir=args.out, self_check=args.self_check)
    print(f"wrote {len(art.files)} files to {art.out_dir} (config {art.config_hash[:12]})")
    for row in art.metrics:
        print(", ".join(f"{k}={format_value(v)}" for k, v in row.items() if k != "config_hash"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    root = Path(args.config_dir)
    configs = sorted(root.glob("*.json"))
    if not configs:
        raise ConfigError(f"no *.json configs in {root}")
    raws = [(p, _read_config(p)) for p in configs]
    by_task: dict[str, list] = {}
    for path, raw in raws:
        out = raw.get("output_dir") or str(root / "runs" / path.stem)
        art = run_experiment(raw, out_dir=out, self_check=args.self_check)
        print(f"{path.name}: {art.task}/{art.variant} -> {art.out_dir}")
        by_task.setdefault(art.task, []).append(art)
    for task, arts in sorted(by_task.items()):
        cols = REGRESSION_COLUMNS if task == "regression" else CLASSIFICATION_COLUMNS
        table = emit_table(arts, cols, root / f"table_{task}.csv")
        print(f"table: {table}")
    return EXIT_OK


def cmd_eval(args) -> int:
    task, cols = read_dump(args.dump)
    out = {"task": task, "n": len(cols["index"])}
    curves = {}
    if task == "regression":
        resid = cols["pred_mean"] - cols["y_true"]
        out["rms"] = ev.rmse(cols["pred_mean"], cols["y_true"])
        out["epistemic"] = float(cols["epistemic_var"].mean())
        out["aleatoric"] = float(cols["aleatoric_var"].mean())
        out["total"] = float(cols["total_var"].mean())
        if np.all(cols["total_var"] > 0):
            curves["calibration"] = ev.regression_calibration(
                cols["pred_mean"], cols["total_var"], cols["y_true"], args.likelihood
            )
            curves["pr"] = ev.precision_recall_uncertainty(cols["total_var"], resid, kind="regression")
    else:
        pcols = sorted((k for k in cols if k.startswith("p") and k[1:].isdigit()), key=lambda k: int(k[1:]))
        probs = np.stack([cols[k] for k in pcols], axis=1)
        correct = (cols["pred_class"] == cols["label"]).astype(float)
        out["accuracy"] = float(correct.mean())
        out["iou"] = ev.classification_metrics(cols["pred_class"], cols["label"], len(pcols))["mean_iou"]
        out["entropy"] = float(cols["entropy"].mean())
        out["epistemic"] = float(cols["logit_var"].mean())
        curves["calibration"] = ev.classification_calibration(probs, cols["label"], args.bins)
        curves["pr"] = ev.precision_recall_uncertainty(cols["entropy"], correct)
    if "calibration" in curves:
        out["calibration_mse"] = ev.calibration_mse(curves["calibration"])
    for k, v in out.items():
        print(f"{k},{format_value(v)}")
    if args.out:
        dest = Path(args.out)
        dest.mkdir(parents=True, exist_ok=True)
        for kind, curve in curves.items():
            ev.write_curve_csv(dest / f"{kind}.csv", curve)
    return EXIT_OK


def cmd_plot(args) -> int:
    curve = ev.read_curve_csv(args.curve)
    kind = "calibration" if isinstance(curve, ev.CalibrationCurve) else "pr"
    dest = Path(args.out) if args.out else Path(args.curve).with_suffix(".svg")
    emit_plot(curve, kind, dest, title=args.title or Path(args.curve).stem)
    print(f"wrote {dest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesunc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="train and evaluate one config")
    p.add_argument("config")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--self-check", action="store_true", help="exit 3 if a decomposition invariant fails")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every *.json in a directory and tabulate")
    p.add_argument("config_dir")
    p.add_argument("--self-check", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="metrics and curves from a prediction dump")
    p.add_argument("dump")
    p.add_argument("--likelihood", choices=("gaussian", "laplace"), default="gaussian")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", help="directory for calibration.csv and pr.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render a curve CSV as SVG")
    p.add_argument("curve")
    p.add_argument("--out")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, NonFiniteError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except AcceptanceViolation as err:
        print(f"invariant violated: {err}", file=sys.stderr)
        return EXIT_VIOLATION
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
