"""Command-line pipeline: gen-data -> train -> certify -> estimate -> report.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical/solver
failure, 4 contract violation.  All outputs are JSON (plus CSV for the
report) and embed a run manifest; reruns with equal seeds produce equal
files.  RNNLIP_THREADS caps internal worker counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import certify as cert_mod
from . import empirical as emp_mod
from . import tanks as tank_mod
from . import training as train_mod
from .errors import ContractError, NumericalError
from .intervals import IntervalBox
from .manifest import TOOL_VERSION, digest_of_text, dump_json, make_manifest
from .model import load_model, save_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3
EXIT_CONTRACT = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        raise _UsageError(message)


def _parse_horizons(text: str) -> list[int]:
    try:
        horizons = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise _UsageError(f"invalid horizon list {text!r}") from exc
    if not horizons or any(h < 1 for h in horizons):
        raise _UsageError("horizons must be a comma-separated list of integers >= 1")
    return horizons


def _parse_bound(text: str, dim: int, name: str) -> np.ndarray:
    values = [float(tok) for tok in text.split(",") if tok.strip()]
    if len(values) == 1:
        return np.full(dim, values[0])
    if len(values) != dim:
        raise _UsageError(f"{name} needs 1 or {dim} comma-separated values")
    return np.asarray(values)


def _model_digest(path: Path) -> str:
    """Digest of the model's canonical schema fields, so that files differing
    only in embedded metadata still join."""
    obj = json.loads(path.read_text())
    core = {k: obj[k] for k in ("n", "m", "p", "activation", "W_x", "W_h", "b", "W_out", "b_out")}
    return digest_of_text(json.dumps(core, sort_keys=True))


def cmd_gen_data(args) -> int:
    cfg = tank_mod.TankConfig(
        tanks=args.tanks,
        sequences=args.sequences,
        sequence_length=args.length,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    ds = tank_mod.generate_dataset(cfg)
    manifest = make_manifest("gen-data", cfg.to_dict(), {"seed": args.seed}, {})
    tank_mod.save_dataset(ds, args.out, extra={"manifest": manifest.to_dict()})
    print(f"gen-data: wrote {args.out} "
          f"({len(ds.train_idx)} train / {len(ds.val_idx)} val sequences, "
          f"{time.perf_counter() - t0:.2f}s)", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    ds = tank_mod.load_dataset(args.data)
    cfg = train_mod.TrainConfig(hidden=args.hidden, seed=args.seed, max_epochs=args.max_epochs)
    t0 = time.perf_counter()
    model, log = train_mod.train(ds, cfg)
    elapsed = time.perf_counter() - t0
    manifest = make_manifest(
        "train",
        {"hidden": cfg.hidden, "washout": cfg.washout, "a1": cfg.a1, "a2": cfg.a2,
         "learning_rate": cfg.learning_rate, "batch_size": cfg.batch_size,
         "max_epochs": cfg.max_epochs, "patience": cfg.patience},
        {"seed": args.seed},
        {"data": args.data},
    )
    save_model(model, args.out, extra={"manifest": manifest.to_dict()})
    log_path = args.log if args.log else str(Path(args.out).with_suffix(".log.json"))
    dump_json({"manifest": manifest.to_dict(), "log": log.to_dict()}, log_path)
    final_norm = log.spectral_norms[-1] if log.spectral_norms else float("nan")
    print(f"train: wrote {args.out} (epochs={log.stopped_epoch + 1}, "
          f"spectral_norm={final_norm:.4f}, {elapsed:.2f}s)", file=sys.stderr)
    if not log.norm_condition_met:
        print("train: stability norm condition unmet", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_certify(args) -> int:
    model = load_model(args.model)
    horizons = _parse_horizons(args.horizons)
    x_box = h0_box = None
    if args.mode == "local":
        lb = _parse_bound(args.input_lb, model.m, "--input-lb")
        ub = _parse_bound(args.input_ub, model.m, "--input-ub")
        x_box = IntervalBox(lb, ub)
        h0_box = IntervalBox.symmetric(model.n)
    t0 = time.perf_counter()
    sweep = cert_mod.sweep_horizons(model, horizons, mode=args.mode, x_box=x_box, h0_box=h0_box)
    elapsed = time.perf_counter() - t0
    manifest = make_manifest(
        "certify",
        {"horizons": horizons, "mode": args.mode,
         "input_lb": args.input_lb if args.mode == "local" else None,
         "input_ub": args.input_ub if args.mode == "local" else None},
        {},
        {"model": args.model},
    )
    payload = {
        "manifest": manifest.to_dict(),
        "model_digest": _model_digest(Path(args.model)),
        "mode": args.mode,
        "results": [r.to_dict() for r in sweep.results],
        "overall_L": sweep.overall_L,
        "all_optimal": sweep.all_optimal,
    }
    dump_json(payload, args.out)
    print(f"certify: wrote {args.out} (overall_L={sweep.overall_L:.6g}, {elapsed:.2f}s)",
          file=sys.stderr)
    if not sweep.all_optimal:
        print("certify: some horizons did not reach a certified optimum", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_estimate(args) -> int:
    model = load_model(args.model)
    cfg = emp_mod.ExplorationConfig(
        samples=args.samples,
        restarts=args.restarts,
        max_epochs=args.max_epochs,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    if args.method == "random":
        result = emp_mod.random_explore(model, args.horizon, cfg)
    elif args.method == "active":
        result = emp_mod.active_explore(model, args.horizon, cfg, bounded=False)
    else:
        result = emp_mod.active_explore(model, args.horizon, cfg, bounded=True)
    elapsed = time.perf_counter() - t0
    manifest = make_manifest(
        "estimate",
        {"method": args.method, "horizon": args.horizon,
         "samples": args.samples, "restarts": args.restarts, "max_epochs": args.max_epochs},
        {"seed": args.seed},
        {"model": args.model},
    )
    payload = {
        "manifest": manifest.to_dict(),
        "model_digest": _model_digest(Path(args.model)),
        "search_seconds": elapsed,
        **result.to_dict(),
    }
    dump_json(payload, args.out)
    print(f"estimate: wrote {args.out} (L_emp={result.L_emp:.6g}, {elapsed:.2f}s)", file=sys.stderr)
    return EXIT_OK


_EST_COLUMN = {"random": "L_rand", "active": "L_act", "active_bounded": "L_act_b"}
_CERT_COLUMN = {"global": "L_cert_global", "local": "L_cert_local"}
REPORT_COLUMNS = ("horizon", "L_cert_global", "L_cert_local", "L_act", "L_act_b",
                  "L_rand", "gap_pct", "improvement_pct")


def cmd_report(args) -> int:
    rows: dict[int, dict] = {}
    digests = set()

    for path in args.cert:
        obj = json.loads(Path(path).read_text())
        digests.add(obj["model_digest"])
        column = _CERT_COLUMN.get(obj["mode"])
        if column is None:
            raise ContractError(f"{path}: unknown certification mode {obj['mode']!r}")
        for entry in obj["results"]:
            row = rows.setdefault(int(entry["horizon"]), {})
            row[column] = float(entry["L"])

    for path in args.estimate:
        obj = json.loads(Path(path).read_text())
        digests.add(obj["model_digest"])
        column = _EST_COLUMN.get(obj["method"])
        if column is None:
            raise ContractError(f"{path}: unknown estimation method {obj['method']!r}")
        row = rows.setdefault(int(obj["horizon"]), {})
        row[column] = float(obj["L_emp"])

    if len(digests) > 1:
        raise ContractError(f"inputs reference {len(digests)} different models; refusing to join")
    if not rows:
        raise ContractError("empty join: no usable rows in the inputs")

    table = []
    gaps, improvements = [], []
    for horizon in sorted(rows):
        row = {"horizon": horizon, **rows[horizon]}
        if "L_cert_global" in row and "L_act" in row and row["L_act"] > 0:
            row["gap_pct"] = (row["L_cert_global"] - row["L_act"]) / row["L_act"] * 100.0
            gaps.append(row["gap_pct"])
        if "L_cert_global" in row and "L_cert_local" in row and row["L_cert_global"] > 0:
            row["improvement_pct"] = (
                (row["L_cert_global"] - row["L_cert_local"]) / row["L_cert_global"] * 100.0
            )
            improvements.append(row["improvement_pct"])
        table.append(row)

    with open(args.out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in table:
            writer.writerow({k: _fmt(row.get(k)) for k in REPORT_COLUMNS})

    manifest = make_manifest(
        "report", {"certifications": list(args.cert), "estimates": list(args.estimate)}, {},
        {f"cert:{p}": p for p in args.cert} | {f"est:{p}": p for p in args.estimate},
    )
    summary = {
        "manifest": manifest.to_dict(),
        "model_digest": next(iter(digests)),
        "rows": table,
        "mean_gap_pct": float(np.mean(gaps)) if gaps else None,
        "mean_improvement_pct": float(np.mean(improvements)) if improvements else None,
    }
    dump_json(summary, args.out_json)
    print(f"report: wrote {args.out_csv} and {args.out_json} ({len(table)} rows)", file=sys.stderr)
    return EXIT_OK


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def build_parser() -> _Parser:
    parser = _Parser(prog="rnnlip", description=__doc__)
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate the multi-tank system into a dataset file")
    p.add_argument("--tanks", type=int, default=3)
    p.add_argument("--sequences", type=int, default=1000)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a stability-regularized RNN on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--log", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("certify", help="compute certified Lipschitz bounds over horizons")
    p.add_argument("--model", required=True)
    p.add_argument("--horizons", required=True, help="comma-separated, e.g. 1,2,5,10")
    p.add_argument("--mode", choices=["global", "local"], default="global")
    p.add_argument("--input-lb", default="-1")
    p.add_argument("--input-ub", default="1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("estimate", help="empirical lower bound via random or active exploration")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=["random", "active", "active-bounded"], required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("report", help="join certification and estimation files into CSV + JSON")
    p.add_argument("--cert", action="append", default=[], help="certification file (repeatable)")
    p.add_argument("--estimate", action="append", default=[], help="estimate file (repeatable)")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "method", None) == "active-bounded":
            args.method = "active_bounded"
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except json.JSONDecodeError as exc:
        print(f"i/o error: malformed JSON input ({exc})", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
