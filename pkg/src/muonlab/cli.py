"""muonlab command line.

Machine-readable results go to stdout as JSON, bulk numbers to CSV files under
``--output-dir``, logs to stderr. Failures print a JSON error object on stderr
and exit with status 1; usage errors exit with status 2.
"""

import argparse
import json
import logging
import math
import sys
import tomllib
from pathlib import Path
from typing import Any

from muonlab.config import RunConfig, load_config
from muonlab.distributed import equivalence_check
from muonlab.errors import ConfigError, MuonLabError
from muonlab.matrix import format_decimal, read_matrix_csv, singular_values, write_matrix_csv
from muonlab.moe import GateConfig, gate_scaling_factor
from muonlab.orthogonalizer import NsConfig, newton_schulz
from muonlab.scaling import (
    PUBLISHED_LAWS,
    compute_to_match,
    evaluate,
    fit_power_law,
    read_points_csv,
)
from muonlab.spectral import spectrum_report, write_spectra
from muonlab.training import harness
from muonlab.utils.provenance import version_string, write_run_config

logger = logging.getLogger(__name__)


# --- Output helpers ------------------------------------------------------------


def _rounded(value: Any, precision: int) -> Any:
    if isinstance(value, float):
        return float(format_decimal(value, precision)) if math.isfinite(value) else value
    if isinstance(value, dict):
        return {k: _rounded(v, precision) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_rounded(v, precision) for v in value]
    return value


def _emit(payload: Any, precision: int) -> None:
    print(json.dumps(_rounded(payload, precision), sort_keys=True))


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AxB, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise argparse.ArgumentTypeError(f"shape sides must be positive, got {text!r}")
    return rows, cols


def _training_config(args: argparse.Namespace) -> RunConfig:
    return args.run_config.with_overrides(
        {
            "run": {"seed": args.seed, "output_dir": args.output_dir, "precision": args.precision},
            "optimizer": {
                "lr": args.lr,
                "weight_decay": getattr(args, "weight_decay", None),
                "scaling_mode": getattr(args, "scaling_mode", None),
            },
            "train": {"steps": args.steps, "optimizer": getattr(args, "optimizer", None)},
        }
    )


# --- Subcommands ---------------------------------------------------------------


def cmd_orthogonalize(args: argparse.Namespace) -> dict:
    m = read_matrix_csv(args.input)
    cfg = NsConfig(steps=args.steps)
    result = newton_schulz(m, cfg)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    output = out_dir / f"{Path(args.input).stem}.orthogonalized.csv"
    write_matrix_csv(output, result, args.precision)
    diagnostics = {
        "shape": list(m.shape),
        "ns": cfg.model_dump(),
        "sigma_before": singular_values(m).tolist(),
        "sigma_after": singular_values(result).tolist(),
    }
    sidecar = output.with_suffix(".json")
    sidecar.write_text(json.dumps(_rounded(diagnostics, args.precision), indent=2) + "\n")
    return {"output": str(output), "sidecar": str(sidecar), **diagnostics}


def cmd_train(args: argparse.Namespace) -> dict:
    cfg = _training_config(args)
    out_dir = cfg.run.output_dir
    write_run_config(out_dir, "train", cfg.model_dump(mode="json"))
    result = harness.train(cfg)
    metrics = result.log.write_csv(out_dir / "metrics.csv", cfg.run.precision)
    checkpoint = harness.save_checkpoint(result.model, out_dir / "checkpoint", cfg.run.precision)
    final = result.log.final
    return {
        "metrics": str(metrics),
        "checkpoint": str(checkpoint),
        "steps": len(result.log),
        "final_train_loss": final.train_loss,
        "final_val_loss": final.val_loss,
        "max_weight_rms": result.log.max_weight_rms(),
    }


def _experiment(args: argparse.Namespace, command: str, run) -> dict:
    cfg = _training_config(args)
    out_dir = cfg.run.output_dir
    write_run_config(out_dir, command, cfg.model_dump(mode="json"))
    report = run(cfg)
    paths = report.write_logs(out_dir, cfg.run.precision)
    return {**report.to_dict(), "metrics": [str(p) for p in paths]}


def cmd_ablate_wd(args: argparse.Namespace) -> dict:
    return _experiment(
        args, "ablate-wd", lambda cfg: harness.ablation_weight_decay(cfg, seeds=args.seeds)
    )


def cmd_compare_optimizers(args: argparse.Namespace) -> dict:
    return _experiment(args, "compare-optimizers", harness.compare_optimizers)


def cmd_sweep_rms(args: argparse.Namespace) -> dict:
    targets = tuple(args.targets) if args.targets else harness.RMS_SWEEP_TARGETS
    return _experiment(args, "sweep-rms", lambda cfg: harness.rms_sweep(cfg, targets))


def cmd_dist_check(args: argparse.Namespace) -> dict:
    cfg = args.run_config
    if args.lr is not None:
        cfg = cfg.with_overrides({"optimizer": {"lr": args.lr}})
    report = equivalence_check(
        args.dp, args.shape, args.steps, args.seed, cfg.optimizer.muon(), cfg.optimizer.adamw()
    )
    return report.to_dict()


def _load_groups(path: str | None, names: list[str]) -> dict[str, str]:
    if path is None:
        return {name: name.rsplit(".", 1)[-1] for name in names}
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read groups file {path}: {exc}", path=str(path)) from exc
    groups = data.get("groups", data)
    if not all(isinstance(v, str) for v in groups.values()):
        raise ConfigError(f"{path}: group names must be strings", path=str(path))
    return groups


def cmd_entropy(args: argparse.Namespace) -> dict:
    weights = harness.load_checkpoint(args.checkpoint)
    summary = spectrum_report(weights, _load_groups(args.groups, list(weights)))
    written = write_spectra(summary, args.output_dir, args.precision)
    return {
        "group_entropy": summary.group_entropy,
        "params": {name: r.entropy for name, r in summary.reports.items()},
        "files": [str(p) for p in written],
    }


def cmd_fit_scaling(args: argparse.Namespace) -> dict:
    fit = fit_power_law(read_points_csv(args.input))
    payload: dict[str, Any] = fit.to_dict()
    if args.budget is not None:
        payload["prediction"] = evaluate(fit.law, args.budget)
    if args.reference is not None:
        needed, ratio = compute_to_match(fit.law, PUBLISHED_LAWS[args.reference], args.budget)
        payload["compute_to_match"] = {"flops": needed, "ratio": ratio}
    return payload


def cmd_gate_factor(args: argparse.Namespace) -> float:
    cfg = GateConfig(
        num_experts=args.experts, topk=args.topk, iter_times=args.iters, seed=args.seed
    )
    return gate_scaling_factor(cfg)


# --- Parser --------------------------------------------------------------------


def _add_training_flags(p: argparse.ArgumentParser, *, optimizer: bool = False) -> None:
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--lr", type=float, help="override optimizer.lr")
    p.add_argument("--scaling-mode", dest="scaling_mode",
                   choices=["baseline", "update_norm", "adjusted_lr", "shape_ratio", "none"])
    if optimizer:
        p.add_argument("--optimizer", choices=["muon", "adamw", "hybrid"])
        p.add_argument("--weight-decay", dest="weight_decay", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="muonlab", description="Muon optimizer experiments at desk scale."
    )
    parser.add_argument("--version", action="version", version=version_string())
    parser.add_argument("--output-dir", help="where CSV/JSON files go (default: run.output_dir)")
    parser.add_argument("--precision", type=int,
                        help="significant digits of emitted decimals (default 17)")
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("orthogonalize", help="Newton-Schulz orthogonalize a matrix CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--steps", type=int, default=NsConfig().steps)
    p.set_defaults(handler=cmd_orthogonalize)

    p = sub.add_parser("train", help="train a toy model and log metrics")
    _add_training_flags(p, optimizer=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("ablate-wd", help="weight decay 0 vs 0.1 on the same run")
    _add_training_flags(p, optimizer=True)
    p.add_argument("--seeds", type=int, default=harness.ABLATION_SEEDS,
                   help="consecutive run seeds per arm (default 5)")
    p.set_defaults(handler=cmd_ablate_wd)

    p = sub.add_parser("compare-optimizers", help="Muon vs AdamW curves on one task")
    _add_training_flags(p)
    p.set_defaults(handler=cmd_compare_optimizers)

    p = sub.add_parser("sweep-rms", help="sweep the matched update RMS against AdamW")
    _add_training_flags(p)
    p.add_argument("--targets", type=float, nargs="+")
    p.set_defaults(handler=cmd_sweep_rms)

    p = sub.add_parser("dist-check", help="distributed vs single-device Muon")
    p.add_argument("--dp", type=int, required=True)
    p.add_argument("--shape", type=_parse_shape, required=True, help="AxB")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--lr", type=float)
    p.set_defaults(handler=cmd_dist_check)

    p = sub.add_parser("entropy", help="SVD entropy of checkpoint weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--groups", help="TOML mapping param name to group")
    p.set_defaults(handler=cmd_entropy)

    p = sub.add_parser("fit-scaling", help="fit y = A * C^alpha to a c,y CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--budget", type=float, help="also predict y at this compute")
    p.add_argument("--reference", choices=["muon_loss", "adamw_loss"],
                   help="with --budget: compute the fitted law needs to match this law")
    p.set_defaults(handler=cmd_fit_scaling)

    p = sub.add_parser("gate-factor", help="Monte Carlo MoE gate scaling factor")
    p.add_argument("--experts", type=int, required=True)
    p.add_argument("--topk", type=int, required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(handler=cmd_gate_factor)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "reference", None) is not None and args.budget is None:
        parser.error("--reference needs --budget")
    if getattr(args, "steps", None) is not None and args.steps < 1:
        parser.error("--steps must be at least 1")
    if getattr(args, "seeds", None) is not None and args.seeds < 1:
        parser.error("--seeds must be at least 1")

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )

    try:
        args.run_config = load_config(args.config).with_overrides(
            {"run": {"output_dir": args.output_dir, "precision": args.precision}}
        )
        args.output_dir = str(args.run_config.run.output_dir)
        args.precision = args.run_config.run.precision
        payload = args.handler(args)
    except (MuonLabError, ValueError) as exc:
        if isinstance(exc, MuonLabError):
            error = exc.to_dict()
        else:
            error = {"error": type(exc).__name__, "message": str(exc)}
        logger.debug("%s failed", args.command, exc_info=True)
        print(json.dumps(error, sort_keys=True, default=str), file=sys.stderr)
        return 1
    _emit(payload, args.precision)
    return 0


if __name__ == "__main__":
    sys.exit(main())
