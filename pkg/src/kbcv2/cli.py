"""Command-line entry point: ``kbcv2 {train,eval,grid,ablate,inspect-checkpoint}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .checkpoint import load_checkpoint
from .evaluation import evaluate
from .experiment import (
    PAPER_BATCH_SIZES,
    PAPER_LEARNING_RATES,
    PAPER_NEGATIVE_COUNTS,
    PAPER_REG_COEFFS,
    AblationSpec,
    ExperimentSpec,
    GridSpec,
    default_dim,
    read_config,
    run_ablation,
    run_experiment,
    run_grid,
)
from .kb import build_filter_index, load_kb
from .training import TrainConfig, parse_regime

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value file; command-line flags override it")
    parser.add_argument("--dataset-dir")
    parser.add_argument("--model", help="TransE, RotatE, ComplEx or SimplE")
    parser.add_argument("--dim", type=int, help="reals per entity (default 2000, 1000 on YAGO3-10)")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--reg", choices=("l2", "n3"))
    parser.add_argument("--reg-coeff", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--negatives", help="k | all-1n | all-accum:M[:batch]")
    parser.add_argument("--reciprocal", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--tag")
    parser.add_argument("--max-epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--eval-sample", type=int, help="cap on dev queries used for early stopping")
    parser.add_argument("--chunk", type=int, help="candidate chunk for translation models")
    parser.add_argument("--simple-variant", choices=("printed", "original"))
    parser.add_argument("--init-std", type=float)
    parser.add_argument("--timing", action=argparse.BooleanOptionalAction, default=None,
                        help="record wall-clock seconds in the training log (default on)")


def _options(args: argparse.Namespace) -> dict:
    options = read_config(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if key not in ("config", "command", "func", "verbose") and value is not None:
            options[key] = value
    return options


def spec_from_options(options: dict) -> ExperimentSpec:
    if "dataset_dir" not in options or "model" not in options:
        raise SystemExit("--dataset-dir and --model are required")
    regime = parse_regime(str(options.get("negatives", "all-1n")))
    cfg = TrainConfig(
        learning_rate=float(options.get("lr", 0.1)),
        reg_kind=str(options.get("reg", "l2")),
        reg_coeff=float(options.get("reg_coeff", 0.0)),
        batch_size=int(options.get("batch_size", 100)),
        regime=regime,
        max_epochs=int(options.get("max_epochs", 1000)),
        patience=int(options.get("patience", 10)),
        eval_every=int(options.get("eval_every", 5)),
        reciprocal=_bool(options.get("reciprocal", True)),
        seed=int(options.get("seed", 0)),
        chunk=int(options["chunk"]) if "chunk" in options else None,
    )
    dataset_dir = str(options["dataset_dir"])
    return ExperimentSpec(
        dataset_dir=dataset_dir,
        model=options["model"],
        dim=int(options.get("dim", default_dim(dataset_dir))),
        train=cfg,
        output_dir=str(options.get("out", "runs")),
        tag=str(options.get("tag", "run")),
        eval_sample=int(options["eval_sample"]) if "eval_sample" in options else None,
        init_std=float(options.get("init_std", 1e-2)),
        simple_variant=str(options.get("simple_variant", "printed")),
        record_time=_bool(options.get("timing", True)),
        resume_from=options.get("resume"),
    )


def _cmd_train(args) -> int:
    outcome = run_experiment(spec_from_options(_options(args)))
    print(outcome.report.to_json())
    return 0


def _cmd_grid(args) -> int:
    options = _options(args)
    grid = GridSpec(
        base=spec_from_options(options),
        reg_coeff=_floats(options.get("grid_reg_coeff", ",".join(map(str, PAPER_REG_COEFFS)))),
        learning_rate=_floats(options.get("grid_lr", ",".join(map(str, PAPER_LEARNING_RATES)))),
        batch_size=_ints(options.get("grid_batch_size", ",".join(map(str, PAPER_BATCH_SIZES)))),
    )
    outcome = run_grid(grid)
    for i, cell in enumerate(outcome.cells):
        mark = "*" if i == outcome.winner else " "
        status = f"dev_mrr={cell.dev_mrr:.4f}" if not cell.failed else f"FAILED {cell.error}"
        print(f"{mark} {json.dumps(cell.settings)} {status}")
    print(outcome.report.to_json())
    return 0


def _cmd_ablate(args) -> int:
    options = _options(args)
    spec = AblationSpec(
        base=spec_from_options(options),
        negative_counts=_ints(options.get("counts", ",".join(map(str, PAPER_NEGATIVE_COUNTS)))),
        distinct=_bool(options.get("distinct", False)),
        exclude_gold=_bool(options.get("exclude_gold", False)),
    )
    print("k,mrr")
    for k, mrr in run_ablation(spec):
        print(f"{k},{mrr!r}")
    return 0


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    params = state.params if args.latest else state.best_params()
    kb = load_kb(args.dataset_dir)
    report = evaluate(params, kb, build_filter_index(kb), args.split)
    print(report.to_json())
    return 0


def _cmd_inspect(args) -> int:
    state = load_checkpoint(args.checkpoint)
    p = state.params
    summary = {
        "kind": p.kind.value,
        "dim": p.dim,
        "n_entities": p.n_entities,
        "n_relations": p.n_relations,
        "relation_rows": p.relation_rows,
        "reciprocal": p.reciprocal,
        "simple_variant": p.simple_variant,
        "dtype": str(p.dtype),
        "tables": {k: list(v.shape) for k, v in p.tables.items()},
        "epoch": state.epoch,
        "best_epoch": state.best_epoch,
        "best_dev_mrr": state.best_mrr,
        "stopped_early": state.stopped,
        "evaluations": len(state.log),
    }
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbcv2", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and evaluate it on test")
    _add_run_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("grid", help="grid search over reg coefficient, learning rate and batch size")
    _add_run_flags(p)
    p.add_argument("--grid-reg-coeff", help="comma list")
    p.add_argument("--grid-lr", help="comma list")
    p.add_argument("--grid-batch-size", help="comma list")
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("ablate", help="test MRR versus number of sampled negatives")
    _add_run_flags(p)
    p.add_argument("--counts", help="comma list of negative counts")
    p.add_argument("--distinct", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--exclude-gold", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--latest", action="store_true", help="use the last parameters instead of the best snapshot")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata")
    p.add_argument("checkpoint")
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
