"""Command-line front end: ``dso <subcommand> ...``.

Every subcommand writes one JSON document (``convert-dcgm`` writes CSV) and
exits 0 on success, 2 on a usage error and 1 on any module error.  With
``--json-errors`` failures are reported on stderr as ``{"error": ..., ...}``.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import math
import os
import sys
from pathlib import Path

from dso.errors import DsoError, EtaOutOfRange, OracleMismatch
from dso.fit import fit_power, fit_time, load_power_sample_csv, load_time_sample_csv
from dso.mlp import (
    DEFAULT_GRID,
    FusedFeatures,
    MlpModel,
    TrainConfig,
    forward,
    read_jsonl_dataset,
    train,
    write_jsonl_dataset,
)
from dso.model import KernelModelParams, check_eta
from dso.optimizer import DvfsDomain, brute_force_config, optimal_config
from dso.ptx_features import INSTRUCTIONS, DTYPES, MEMSPACES, featurize, parse_ptx
from dso.sim import DEFAULT_ETAS, campaign_dataset, default_domain, run_campaign
from dso.telemetry import convert_dcgmi_dmon, load_dcgm_samples

FORMAT_VERSION = 1
EXIT_OK, EXIT_MODULE, EXIT_USAGE = 0, 1, 2
ORACLE_RTOL = 1e-9


class UsageError(Exception):
    code = "UsageError"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load_schema(name: str) -> dict:
    """Bundled JSON schema for the output named ``name`` (e.g. ``"optimize"``)."""
    ref = importlib.resources.files("dso") / "schemas" / f"{name}.v{FORMAT_VERSION}.schema.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def dumps(doc: dict) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(doc: dict, out: str | None = None) -> None:
    text = dumps({"format_version": FORMAT_VERSION, **doc})
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def _read_json(path: str) -> dict:
    try:
        doc = json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return doc


def _seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("DSO_SEED")
    if env is None:
        return 0
    try:
        seed = int(env)
    except ValueError:
        raise UsageError(f"DSO_SEED must be an integer, got {env!r}") from None
    if seed < 0:
        raise UsageError("DSO_SEED must be >= 0")
    return seed


def _counts_doc(counts) -> dict:
    vec = featurize(counts)
    return {
        "kernel": counts.kernel_name,
        "total_instructions": counts.total_instructions,
        "counts": {
            "instr": dict(sorted(counts.instr_counts.items())),
            "dtype": dict(sorted(counts.dtype_counts.items())),
            "memspace": dict(sorted(counts.memspace_counts.items())),
        },
        "features": {
            "instr": dict(zip(INSTRUCTIONS, vec.instr.tolist())),
            "dtype": dict(zip(DTYPES, vec.dtype.tolist())),
            "memspace": dict(zip(MEMSPACES, vec.memspace.tolist())),
        },
    }


def cmd_features(args) -> None:
    text = _read(args.file)
    if args.source == "ptx":
        _emit({"kernels": [_counts_doc(c) for c in parse_ptx(text)]}, args.out)
    else:
        _emit({"metrics": load_dcgm_samples(text).to_dict()}, args.out)


def cmd_fit(args) -> None:
    pf = fit_power(load_power_sample_csv(_read(args.power)))
    tf = fit_time(load_time_sample_csv(_read(args.time)))
    params = KernelModelParams(pf.p0, pf.kappa_pow, pf.gamma, pf.c, tf.t0, tf.alpha, tf.beta)
    _emit({
        "params": params.to_dict(),
        "power_fit": {"mape": pf.mape, "constraint_active": pf.constraint_active},
        "time_fit": {
            "mape": tf.mape,
            "iterations": tf.iterations,
            "partial_identifiability": tf.partial_identifiability,
            "constraint_active": tf.constraint_active,
            "labels": tf.labels,
            "rss_trace": tf.rss_trace,
        },
    }, args.out)


def _parse_grid(text: str) -> tuple[tuple[float, int], ...]:
    grid = []
    for cell in text.split(","):
        try:
            lr, bs = cell.split(":")
            grid.append((float(lr), int(bs)))
        except ValueError:
            raise UsageError(f"bad grid cell {cell!r}; expected LR:BATCH") from None
        if not (grid[-1][0] > 0 and grid[-1][1] > 0):
            raise UsageError(f"grid cell {cell!r} must be positive")
    return tuple(grid)


def cmd_train(args) -> None:
    X, Y = read_jsonl_dataset(_read(args.dataset))
    grid = _parse_grid(args.grid) if args.grid else DEFAULT_GRID
    cfg = TrainConfig(epochs=args.epochs, seed=_seed(args.seed), grid=grid,
                      learning_rate=grid[0][0], batch_size=grid[0][1])
    model = train((X, Y), cfg)
    Path(args.out).write_text(dumps(model.to_dict()), encoding="utf-8")
    _emit({
        "model": args.out,
        "n_samples": int(X.shape[0]),
        "cv": model.meta["cv"],
        "final_loss": model.meta["final_loss"],
        "degenerate_targets": model.meta["degenerate_targets"],
    })


def cmd_predict(args) -> None:
    model = MlpModel.from_dict(_read_json(args.model))
    kernels = parse_ptx(_read(args.ptx))
    dcgm = load_dcgm_samples(_read(args.dcgm))
    if args.kernel is not None:
        kernels = [k for k in kernels if k.kernel_name == args.kernel]
        if not kernels:
            raise UsageError(f"kernel {args.kernel!r} not found in {args.ptx}")
    elif len(kernels) != 1:
        raise UsageError(f"{args.ptx} holds {len(kernels)} kernels; pick one with --kernel")
    counts = kernels[0]
    params, clamped = forward(model, FusedFeatures(dcgm, featurize(counts)))
    _emit({"kernel": counts.kernel_name, "params": params.to_dict(), "clamped": clamped}, args.out)


def _load_params(path: str) -> KernelModelParams:
    doc = _read_json(path)
    return KernelModelParams.from_dict(doc.get("params", doc))


def cmd_optimize(args) -> None:
    check_eta(args.eta)
    if args.pmax is not None and not (math.isfinite(args.pmax) and args.pmax > 0):
        raise UsageError("--pmax must be a positive number")
    params = _load_params(args.params)
    domain = DvfsDomain.from_dict(_read_json(args.domain)) if args.domain else default_domain()
    result = optimal_config(params, domain, args.eta, args.pmax)
    doc = {"eta": args.eta, "result": result.to_dict(), "candidates_evaluated": result.candidates_evaluated}
    if args.oracle:
        oracle = brute_force_config(params, domain, args.eta, args.pmax)
        if result.cost > oracle.cost * (1 + ORACLE_RTOL):
            raise OracleMismatch(f"analytic cost {result.cost!r} > brute-force cost {oracle.cost!r}")
        doc["oracle"] = {**oracle.to_dict(), "agrees": True}
    _emit(doc, args.out)


def _parse_etas(text: str) -> tuple[float, ...]:
    try:
        etas = tuple(float(e) for e in text.split(","))
    except ValueError:
        raise UsageError(f"bad eta list {text!r}") from None
    for e in etas:
        check_eta(e)
    return etas


def cmd_simulate(args) -> None:
    seed = _seed(args.seed)
    domain = DvfsDomain.from_dict(_read_json(args.domain)) if args.domain else default_domain()
    etas = _parse_etas(args.etas) if args.etas else DEFAULT_ETAS
    if args.corpus < 3 or args.test < 1:
        raise UsageError("need --corpus >= 3 and --test >= 1")
    if not args.noise >= 0:
        raise UsageError("--noise must be >= 0")
    cfg = TrainConfig(seed=seed, epochs=args.epochs)
    report = run_campaign(args.corpus, args.test, domain, etas, seed, args.noise, cfg)
    if args.dataset_out:
        X, Y, _ = campaign_dataset(args.corpus, seed, domain, args.noise)
        Path(args.dataset_out).write_text(write_jsonl_dataset(X, Y), encoding="utf-8")
    _emit(report, args.out)


def cmd_convert_dcgm(args) -> None:
    csv_text = convert_dcgmi_dmon(_read(args.file), args.interval, args.gpu)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)


def _eta(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid eta {text!r}") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"invalid eta {text!r}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _seed_arg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dso", description="GPU DVFS energy/performance toolkit.")
    p.add_argument("--json-errors", action="store_true", help="report failures as JSON on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("features", help="extract PTX or DCGM features")
    f.add_argument("source", choices=("ptx", "dcgm"))
    f.add_argument("file")
    f.add_argument("--out")
    f.set_defaults(func=cmd_features)

    f = sub.add_parser("fit", help="fit model parameters from a DVFS sweep")
    f.add_argument("--power", required=True, help="CSV vc,fc_mhz,fm_mhz,power_w")
    f.add_argument("--time", required=True, help="CSV vc,fc_mhz,fm_mhz,time_s")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    f = sub.add_parser("train", help="train the parameter-prediction network")
    f.add_argument("--dataset", required=True, help="JSON lines {features, targets}")
    f.add_argument("--out", required=True, help="model JSON to write")
    f.add_argument("--grid", help="comma-separated LR:BATCH cells, e.g. 0.1:16,0.03:8")
    f.add_argument("--epochs", type=_positive_int, default=TrainConfig.epochs)
    f.add_argument("--seed", type=_seed_arg)
    f.set_defaults(func=cmd_train)

    f = sub.add_parser("predict", help="predict parameters for one kernel")
    f.add_argument("--model", required=True)
    f.add_argument("--ptx", required=True)
    f.add_argument("--dcgm", required=True)
    f.add_argument("--kernel", help="kernel name when the PTX file holds several")
    f.add_argument("--out")
    f.set_defaults(func=cmd_predict)

    f = sub.add_parser("optimize", help="pick the cost-optimal DVFS configuration")
    f.add_argument("--params", required=True, help="parameter JSON (bare or as emitted by fit/predict)")
    f.add_argument("--domain", help="domain JSON; defaults to the built-in synthetic domain")
    f.add_argument("--eta", type=_eta, required=True)
    f.add_argument("--pmax", type=float, help="override the device pmax")
    f.add_argument("--oracle", action="store_true", help="cross-check against brute force")
    f.add_argument("--out")
    f.set_defaults(func=cmd_optimize)

    f = sub.add_parser("simulate", help="run a synthetic end-to-end campaign")
    f.add_argument("--corpus", type=_positive_int, default=138, help="training kernels")
    f.add_argument("--test", type=_positive_int, default=20, help="held-out kernels")
    f.add_argument("--etas", help="comma-separated eta values")
    f.add_argument("--seed", type=_seed_arg)
    f.add_argument("--noise", type=float, default=0.01)
    f.add_argument("--epochs", type=_positive_int, default=TrainConfig.epochs)
    f.add_argument("--domain")
    f.add_argument("--dataset-out", help="also write the fitted training set as JSON lines")
    f.add_argument("--out")
    f.set_defaults(func=cmd_simulate)

    f = sub.add_parser("convert-dcgm", help="normalize a dcgmi dmon dump into the ingest CSV")
    f.add_argument("file")
    f.add_argument("--interval", type=float, default=1.0, help="seconds between samples")
    f.add_argument("--gpu", type=int)
    f.add_argument("--out")
    f.set_defaults(func=cmd_convert_dcgm)
    return p


def _fail(exc: Exception, code: str, as_json: bool) -> None:
    if as_json:
        doc = exc.to_dict() if isinstance(exc, DsoError) else {"error": code, "message": str(exc)}
        sys.stderr.write(dumps({"format_version": FORMAT_VERSION, **doc}))
    else:
        sys.stderr.write(f"dso: {code}: {exc}\n")


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json-errors" in argv
    argv = [a for a in argv if a != "--json-errors"]
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _fail(exc, UsageError.code, as_json)
        return EXIT_USAGE
    try:
        args.func(args)
    except (UsageError, EtaOutOfRange) as exc:
        _fail(exc, exc.code, as_json)
        return EXIT_USAGE
    except DsoError as exc:
        _fail(exc, exc.code, as_json)
        return EXIT_MODULE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
