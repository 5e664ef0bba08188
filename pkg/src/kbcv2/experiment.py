"""Experiment orchestration: single runs, grid search and the negative-count ablation.

Every run writes under ``output_dir/tag``:

* ``train_log.jsonl`` - one record per dev evaluation;
* ``report.json``     - the test-split :class:`EvalReport` record;
* ``checkpoint.npz``  - final training state including the best snapshot.

Grid runs add ``grid.jsonl`` (one line per cell) and ablations ``ablation.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import EvalReport, evaluate, mrr_only
from .kb import SPLITS, FilterIndex, KnowledgeBase, build_filter_index, load_kb
from .models import ModelKind, ModelParams, init_params
from .training import Sampled, TrainConfig, TrainResult, TrainState, format_record, train

logger = logging.getLogger(__name__)

PAPER_REG_COEFFS = (1.0, 0.1, 0.01, 0.001, 0.0001, 0.00001)
PAPER_LEARNING_RATES = (0.5, 0.1, 0.01, 0.001, 0.0001)
PAPER_BATCH_SIZES = (100, 200, 500, 1000, 2000)
PAPER_NEGATIVE_COUNTS = (100, 200, 400, 600, 800, 1000, 2000, 4000, 6000, 8000, 10000, 12000, 14000)


class ExperimentError(RuntimeError):
    pass


def default_dim(dataset_dir: str | os.PathLike) -> int:
    """2000 reals per entity, 1000 on YAGO3-10."""
    return 1000 if "yago" in os.path.basename(os.path.normpath(dataset_dir)).lower() else 2000


@dataclass
class ExperimentSpec:
    dataset_dir: str
    model: ModelKind
    dim: int
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    tag: str = "run"
    eval_sample: int | None = None
    init_std: float = 1e-2
    simple_variant: str = "printed"
    record_time: bool = True
    resume_from: str | None = None

    def __post_init__(self):
        self.model = ModelKind.parse(self.model)

    @property
    def run_dir(self) -> str:
        return os.path.join(self.output_dir, self.tag)


@dataclass
class GridSpec:
    base: ExperimentSpec
    reg_coeff: Sequence[float] = PAPER_REG_COEFFS
    learning_rate: Sequence[float] = PAPER_LEARNING_RATES
    batch_size: Sequence[int] = PAPER_BATCH_SIZES

    def __post_init__(self):
        for axis in ("reg_coeff", "learning_rate", "batch_size"):
            if not len(getattr(self, axis)):
                raise ValueError(f"grid axis {axis} is empty")

    def cells(self) -> list[dict]:
        return [
            {"reg_coeff": c, "learning_rate": lr, "batch_size": bs}
            for c, lr, bs in itertools.product(self.reg_coeff, self.learning_rate, self.batch_size)
        ]


@dataclass
class AblationSpec:
    base: ExperimentSpec
    negative_counts: Sequence[int] = PAPER_NEGATIVE_COUNTS
    distinct: bool = False
    exclude_gold: bool = False


@dataclass
class RunOutcome:
    report: EvalReport
    result: TrainResult

    @property
    def dev_mrr(self) -> float:
        return self.result.best_mrr


# -- shared pieces -------------------------------------------------------------


def _prepare(spec: ExperimentSpec) -> tuple[KnowledgeBase, FilterIndex]:
    """Validate inputs and outputs before any training starts."""
    missing = [s for s in SPLITS if not os.path.isfile(os.path.join(spec.dataset_dir, f"{s}.txt"))]
    if missing:
        raise ExperimentError(f"{spec.dataset_dir}: missing split file(s) {', '.join(m + '.txt' for m in missing)}")
    try:
        os.makedirs(spec.run_dir, exist_ok=True)
    except OSError as exc:
        raise ExperimentError(f"cannot create output directory {spec.run_dir}: {exc}") from exc
    if not os.access(spec.run_dir, os.W_OK):
        raise ExperimentError(f"output directory {spec.run_dir} is not writable")
    kb = load_kb(spec.dataset_dir)
    return kb, build_filter_index(kb)


def _init_rng(seed: int) -> np.random.Generator:
    # children 0 and 1 feed the shuffling and sampling streams of TrainState.fresh
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])


def fit(spec: ExperimentSpec, kb: KnowledgeBase, index: FilterIndex, log_path: str | None = None) -> TrainResult:
    """Train on ``kb.train`` with early stopping on the dev split only."""
    cfg = spec.train
    if spec.resume_from:
        start: ModelParams | TrainState = load_checkpoint(spec.resume_from, expect_kind=spec.model)
    else:
        start = init_params(
            spec.model,
            kb.n_entities,
            kb.n_relations,
            spec.dim,
            reciprocal=cfg.reciprocal,
            rng=_init_rng(cfg.seed),
            std=spec.init_std,
            simple_variant=spec.simple_variant,
        )

    def dev_mrr(params: ModelParams) -> float:
        sample = None if spec.eval_sample is None else min(spec.eval_sample, 2 * len(kb.valid))
        return mrr_only(params, kb, index, "valid", sample=sample)

    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log_file is not None and isinstance(start, TrainState):
            for record in start.log:
                log_file.write(format_record(record) + "\n")

        def on_record(record):
            if log_file is not None:
                log_file.write(format_record(record) + "\n")
                log_file.flush()

        return train(start, kb, cfg, dev_mrr, on_record=on_record, record_time=spec.record_time)
    finally:
        if log_file is not None:
            log_file.close()


def _write_report(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(report.to_record(), indent=2) + "\n")


# -- verbs ---------------------------------------------------------------------


def run_experiment(spec: ExperimentSpec) -> RunOutcome:
    """Load data, train with dev early stopping, evaluate the best snapshot on test."""
    kb, index = _prepare(spec)
    result = fit(spec, kb, index, os.path.join(spec.run_dir, "train_log.jsonl"))
    save_checkpoint(os.path.join(spec.run_dir, "checkpoint.npz"), result.state)
    report = evaluate(result.params, kb, index, "test")
    _write_report(os.path.join(spec.run_dir, "report.json"), report)
    return RunOutcome(report, result)


@dataclass
class GridCell:
    settings: dict
    dev_mrr: float | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class GridOutcome:
    cells: list[GridCell]
    winner: int
    report: EvalReport


def run_grid(grid: GridSpec) -> GridOutcome:
    """Exhaustive sweep; the best dev MRR (earliest cell on ties) is the only test evaluation."""
    base = grid.base
    kb, index = _prepare(base)
    cells: list[GridCell] = []
    best: tuple[int, TrainResult] | None = None
    for i, settings in enumerate(grid.cells()):
        spec = dataclasses.replace(base, train=dataclasses.replace(base.train, **settings), resume_from=None)
        try:
            result = fit(spec, kb, index)
            dev = result.best_mrr
            if not math.isfinite(dev):
                raise ExperimentError(f"non-finite dev MRR {dev}")
        except Exception as exc:  # a failed cell is recorded, not fatal
            logger.warning("grid cell %d %s failed: %s", i, settings, exc)
            cells.append(GridCell(settings, None, f"{type(exc).__name__}: {exc}"))
            continue
        cells.append(GridCell(settings, dev))
        if best is None or dev > cells[best[0]].dev_mrr:
            best = (i, result)
    with open(os.path.join(base.run_dir, "grid.jsonl"), "w", encoding="utf-8") as f:
        for i, cell in enumerate(cells):
            f.write(json.dumps({"cell": i, **cell.settings, "dev_mrr": cell.dev_mrr, "error": cell.error}) + "\n")
    if best is None:
        raise ExperimentError("every grid cell failed")
    winner, result = best
    save_checkpoint(os.path.join(base.run_dir, "checkpoint.npz"), result.state)
    report = evaluate(result.params, kb, index, "test")
    _write_report(os.path.join(base.run_dir, "report.json"), report)
    return GridOutcome(cells, winner, report)


def run_ablation(spec: AblationSpec) -> list[tuple[int, float]]:
    """Test MRR of sampled-softmax training for each negative count; writes ``ablation.csv``."""
    base = spec.base
    kb, index = _prepare(base)
    too_many = [k for k in spec.negative_counts if k > kb.n_entities]
    if too_many:
        raise ExperimentError(f"negative counts {too_many} exceed the {kb.n_entities} entities")
    curve = []
    for k in spec.negative_counts:
        regime = Sampled(k, distinct=spec.distinct, exclude_gold=spec.exclude_gold)
        run = dataclasses.replace(base, train=dataclasses.replace(base.train, regime=regime), resume_from=None)
        result = fit(run, kb, index)
        mrr = evaluate(result.params, kb, index, "test").mrr
        logger.info("ablation k=%d test mrr %.4f", k, mrr)
        curve.append((k, mrr))
    with open(os.path.join(base.run_dir, "ablation.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "mrr"])
        writer.writerows((k, repr(m)) for k, m in curve)
    return curve


# -- flat key=value configuration ----------------------------------------------


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    options = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            options[key.replace("-", "_")] = value
    return options
