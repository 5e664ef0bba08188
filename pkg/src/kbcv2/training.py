"""Softmax losses, regularisers, AdaGrad and the training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .kb import KnowledgeBase
from .models import (
    TAIL,
    ModelKind,
    ModelParams,
    backward_candidates,
    backward_triples,
    head_query,
    score_candidates,
    score_triples,
    touched_rows,
    triple_of_query,
)

logger = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-10
REG_KINDS = ("l2", "n3")


class TrainingDiverged(RuntimeError):
    """Raised when a batch loss becomes NaN or infinite."""


# -- negative-sampling regimes -------------------------------------------------


@dataclass(frozen=True)
class Sampled:
    """``k`` uniform negatives per batch, shared by every query of the batch.

    ``distinct`` draws without replacement; ``exclude_gold`` masks negatives
    that coincide with a query's gold answer.  With ``k == n_entities`` and
    both flags set the loss equals the full softmax.
    """

    k: int
    distinct: bool = False
    exclude_gold: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class OneN:
    """All entities as negatives, scored in one pass."""


@dataclass(frozen=True)
class Accumulated:
    """All entities as negatives, gradients summed over ``micro_batches`` pieces.

    ``split="candidates"`` partitions the entity set, ``split="batch"`` the queries.
    """

    micro_batches: int
    split: str = "candidates"

    def __post_init__(self):
        if self.micro_batches < 1:
            raise ValueError(f"micro_batches must be >= 1, got {self.micro_batches}")
        if self.split not in ("candidates", "batch"):
            raise ValueError(f"split must be 'candidates' or 'batch', got {self.split!r}")


Regime = Union[Sampled, OneN, Accumulated]


def parse_regime(text: str) -> Regime:
    """Parse ``k``, ``all-1n`` or ``all-accum:M[:batch|candidates]``."""
    text = text.strip().lower()
    if text == "all-1n":
        return OneN()
    if text.startswith("all-accum:"):
        parts = text.split(":")
        split = parts[2] if len(parts) > 2 else "candidates"
        return Accumulated(int(parts[1]), split)
    try:
        return Sampled(int(text))
    except ValueError:
        raise ValueError(f"cannot parse negatives {text!r}; expected k, all-1n or all-accum:M") from None


def format_regime(regime: Regime) -> str:
    if isinstance(regime, OneN):
        return "all-1n"
    if isinstance(regime, Accumulated):
        suffix = "" if regime.split == "candidates" else f":{regime.split}"
        return f"all-accum:{regime.micro_batches}{suffix}"
    return str(regime.k)


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    reg_kind: str = "l2"
    reg_coeff: float = 0.0
    batch_size: int = 100
    regime: Regime = field(default_factory=OneN)
    max_epochs: int = 1000
    patience: int = 10
    eval_every: int = 5
    reciprocal: bool = True
    seed: int = 0
    chunk: int | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.reg_kind not in REG_KINDS:
            raise ValueError(f"reg_kind must be one of {REG_KINDS}, got {self.reg_kind!r}")
        if self.reg_coeff < 0:
            raise ValueError("reg_coeff must be >= 0")
        for name in ("batch_size", "max_epochs", "patience", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# -- losses --------------------------------------------------------------------


def _logsumexp(x):
    m = np.max(x, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def loss_full_softmax(scores, gold):
    """Cross-entropy of a softmax over all candidates.

    Accepts one row with an integer ``gold`` or a ``(B, N)`` matrix with a
    length-``B`` gold array; returns ``(loss, dscores)`` with per-row losses
    in the batched case.
    """
    scores = np.asarray(scores)
    single = scores.ndim == 1
    S = scores[None, :] if single else scores
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    if gold.shape[0] != S.shape[0]:
        raise ValueError("one gold id per score row required")
    if np.any((gold < 0) | (gold >= S.shape[1])):
        raise IndexError(f"gold id out of range [0, {S.shape[1]})")
    rows = np.arange(S.shape[0])
    lse = _logsumexp(S)
    loss = lse - S[rows, gold]
    d = np.exp(S - lse[:, None])
    d[rows, gold] -= 1.0
    if single:
        return float(loss[0]), d[0]
    return loss, d


def loss_sampled(pos_score, neg_scores, mask=None):
    """Softmax cross-entropy over ``[pos; negs]`` with the gold at position 0.

    ``mask`` marks negatives to drop (same shape as ``neg_scores``).  Returns
    ``(loss, dpos, dnegs)``; batched inputs give per-row losses.
    """
    pos = np.asarray(pos_score)
    negs = np.asarray(neg_scores)
    single = negs.ndim == 1
    P = pos.reshape(-1)
    N = negs.reshape(P.shape[0], -1)
    row = np.concatenate([P[:, None], N], axis=1)
    if mask is not None:
        row[:, 1:][np.asarray(mask).reshape(N.shape)] = -np.inf
    loss, d = loss_full_softmax(row, np.zeros(len(P), dtype=np.int64))
    if single:
        return float(loss[0]), d[0, 0], d[0, 1:]
    return loss, d[:, 0], d[:, 1:]


# -- regularisation ------------------------------------------------------------


def _n3_pairs(p: ModelParams, table: str) -> bool:
    return p.kind in (ModelKind.COMPLEX, ModelKind.ROTATE)


def regularize(p: ModelParams, rows: dict[str, np.ndarray], reg_kind: str, coeff: float, grads=None):
    """Penalty over the given rows (with multiplicity) and its gradient.

    ``l2``: ``coeff * sum ||row||^2``.  ``n3``: ``coeff * sum |c|^3`` over the
    complex components of ComplEx/RotatE rows, or over single coordinates for
    the real-valued models.  RotatE phase angles are never penalised.
    """
    if reg_kind not in REG_KINDS:
        raise ValueError(f"reg_kind must be one of {REG_KINDS}, got {reg_kind!r}")
    grads = p.zeros() if grads is None else grads
    penalty = 0.0
    for table, idx in rows.items():
        if p.kind is ModelKind.ROTATE and table == "relation":
            continue
        idx = np.asarray(idx, dtype=np.int64)
        x = p.tables[table][idx]
        if reg_kind == "l2":
            penalty += coeff * float(np.sum(x * x))
            g = 2.0 * coeff * x
        elif _n3_pairs(p, table):
            re, im = x[:, 0::2], x[:, 1::2]
            mod = np.sqrt(re * re + im * im)
            penalty += coeff * float(np.sum(mod**3))
            g = np.empty_like(x)
            g[:, 0::2] = 3.0 * coeff * mod * re
            g[:, 1::2] = 3.0 * coeff * mod * im
        else:
            a = np.abs(x)
            penalty += coeff * float(np.sum(a**3))
            g = 3.0 * coeff * a * x
        np.add.at(grads[table], idx, g)
    return penalty, grads


# -- optimiser -----------------------------------------------------------------


@dataclass(eq=False)
class OptState:
    """AdaGrad accumulators of squared gradients, one array per table."""

    accum: dict[str, np.ndarray]
    eps: float = ADAGRAD_EPS

    @classmethod
    def zeros_like(cls, p: ModelParams, eps: float = ADAGRAD_EPS) -> OptState:
        return cls(p.zeros(), eps)

    def copy(self) -> OptState:
        return OptState({k: v.copy() for k, v in self.accum.items()}, self.eps)


def adagrad_step(opt: OptState, p: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
    """In-place AdaGrad update touching only rows with a nonzero gradient."""
    for name, g in grads.items():
        rows = np.flatnonzero(np.any(g != 0, axis=1))
        if not rows.size:
            continue
        gr = g[rows]
        acc = opt.accum[name]
        acc[rows] += gr * gr
        p.tables[name][rows] -= lr * gr / (np.sqrt(acc[rows]) + opt.eps)
    if p.kind is ModelKind.ROTATE:
        theta = p.tables["relation"]
        theta[...] = np.mod(theta + np.pi, 2 * np.pi) - np.pi


# -- one logical batch ---------------------------------------------------------


def batch_queries(p: ModelParams, triples: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, str, np.ndarray]]:
    """Tail and head queries ``(anchor, relation row, side, gold)`` for a batch of triples."""
    s, r, o = triples[:, 0], triples[:, 1], triples[:, 2]
    h_anchor, h_rel, h_side = head_query(p, r, o)
    if h_side == TAIL:
        return [(np.concatenate([s, h_anchor]), np.concatenate([r, h_rel]), TAIL, np.concatenate([o, s]))]
    return [(s, r, TAIL, o), (h_anchor, h_rel, h_side, s)]


def _draw_negatives(regime: Sampled, n_entities: int, rng: np.random.Generator) -> np.ndarray:
    if regime.distinct:
        if regime.k > n_entities:
            raise ValueError(f"cannot draw {regime.k} distinct negatives from {n_entities} entities")
        negs = rng.choice(n_entities, size=regime.k, replace=False)
    else:
        negs = rng.integers(0, n_entities, size=regime.k)
    return np.sort(negs)


def batch_gradient(
    p: ModelParams,
    triples: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over the batch's queries plus regulariser, and its gradient."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if not len(triples):
        raise ValueError("empty batch")
    queries = batch_queries(p, triples)
    n_q = sum(len(q[0]) for q in queries)
    grads = p.zeros()
    regime = config.regime
    total = 0.0
    negs = None
    if isinstance(regime, Sampled):
        if rng is None:
            raise ValueError("sampled negatives need a random generator")
        negs = _draw_negatives(regime, p.n_entities, rng)

    for anchor, rel, side, gold in queries:
        if isinstance(regime, Sampled):
            s, r, o = triple_of_query(anchor, rel, side, gold)
            pos = score_triples(p, s, r, o)
            neg = score_candidates(p, anchor, rel, side, candidates=negs, chunk=config.chunk)
            mask = (negs[None, :] == gold[:, None]) if regime.exclude_gold else None
            loss, dpos, dneg = loss_sampled(pos, neg, mask)
            backward_triples(p, s, r, o, dpos / n_q, grads)
            backward_candidates(p, anchor, rel, side, dneg / n_q, grads, candidates=negs, chunk=config.chunk)
            total += float(np.sum(loss))
        elif isinstance(regime, Accumulated) and regime.split == "batch":
            for part in np.array_split(np.arange(len(anchor)), regime.micro_batches):
                if not part.size:
                    continue
                S = score_candidates(p, anchor[part], rel[part], side, chunk=config.chunk)
                loss, dS = loss_full_softmax(S, gold[part])
                backward_candidates(p, anchor[part], rel[part], side, dS / n_q, grads, chunk=config.chunk)
                total += float(np.sum(loss))
        else:
            chunk = config.chunk
            if isinstance(regime, Accumulated):
                chunk = math.ceil(p.n_entities / regime.micro_batches)
            S = score_candidates(p, anchor, rel, side, chunk=chunk)
            loss, dS = loss_full_softmax(S, gold)
            backward_candidates(p, anchor, rel, side, dS / n_q, grads, chunk=chunk)
            total += float(np.sum(loss))

    if config.reg_coeff > 0:
        rows: dict[str, list[np.ndarray]] = {}
        for anchor, rel, side, gold in queries:
            for table, idx in touched_rows(p, *triple_of_query(anchor, rel, side, gold)).items():
                rows.setdefault(table, []).append(idx)
        penalty, _ = regularize(
            p, {t: np.concatenate(v) for t, v in rows.items()}, config.reg_kind, config.reg_coeff / n_q, grads
        )
        total += penalty * n_q
    return total / n_q, grads


def train_batch(
    p: ModelParams,
    opt: OptState,
    triples: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
) -> float:
    """One optimiser step on a logical batch; returns the batch loss."""
    loss, grads = batch_gradient(p, triples, config, rng)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite batch loss {loss}")
    adagrad_step(opt, p, grads, config.learning_rate)
    return loss


# -- epoch loop ----------------------------------------------------------------


@dataclass(eq=False)
class TrainState:
    """Everything needed to resume training bit-exactly."""

    params: ModelParams
    opt: OptState
    shuffle_rng: np.random.Generator
    sample_rng: np.random.Generator
    epoch: int = 0
    best_tables: dict[str, np.ndarray] | None = None
    best_mrr: float = -math.inf
    best_epoch: int = 0
    bad_evals: int = 0
    stopped: bool = False
    elapsed: float = 0.0
    log: list[dict] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: ModelParams, seed: int) -> TrainState:
        shuffle_seed, sample_seed = np.random.SeedSequence(seed).spawn(2)
        return cls(
            params=params,
            opt=OptState.zeros_like(params),
            shuffle_rng=np.random.default_rng(shuffle_seed),
            sample_rng=np.random.default_rng(sample_seed),
        )

    def best_params(self) -> ModelParams:
        best = self.params.copy()
        if self.best_tables is not None:
            best.tables = {k: v.copy() for k, v in self.best_tables.items()}
        return best


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    state: TrainState

    @property
    def best_mrr(self) -> float:
        return self.state.best_mrr


def format_record(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"))


def train(
    params: ModelParams | TrainState,
    kb: KnowledgeBase,
    config: TrainConfig,
    evaluate: Callable[[ModelParams], float],
    on_record: Callable[[dict], None] | None = None,
    record_time: bool = True,
) -> TrainResult:
    """Train with early stopping on ``evaluate`` (higher is better).

    ``params`` may be a :class:`TrainState` to resume an interrupted run.
    Every ``eval_every`` epochs a log record ``{epoch, train_loss, dev_mrr,
    seconds}`` is produced; training stops after ``patience`` consecutive
    non-improving evaluations or ``max_epochs``.  The returned parameters are
    the best-scoring snapshot, never simply the last.
    """
    state = params if isinstance(params, TrainState) else TrainState.fresh(params, config.seed)
    p = state.params
    train_triples = kb.train
    if not len(train_triples):
        raise ValueError("knowledge base has no training triples")
    started = time.perf_counter() - state.elapsed

    def evaluate_now(epoch_loss):
        mrr = float(evaluate(p))
        if record_time:
            state.elapsed = time.perf_counter() - started
        record = {
            "epoch": state.epoch,
            "train_loss": epoch_loss,
            "dev_mrr": mrr,
            "seconds": round(state.elapsed, 3) if record_time else None,
        }
        state.log.append(record)
        if on_record is not None:
            on_record(record)
        logger.info("epoch %d loss %.6f dev_mrr %.4f", state.epoch, epoch_loss, mrr)
        if mrr > state.best_mrr:
            state.best_mrr, state.best_epoch, state.bad_evals = mrr, state.epoch, 0
            state.best_tables = {k: v.copy() for k, v in p.tables.items()}
        else:
            state.bad_evals += 1
            if state.bad_evals >= config.patience:
                state.stopped = True

    epoch_loss = math.nan
    while not state.stopped and state.epoch < config.max_epochs:
        order = state.shuffle_rng.permutation(len(train_triples))
        weighted = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = train_triples[order[start : start + config.batch_size]]
            weighted += train_batch(p, state.opt, batch, config, state.sample_rng) * len(batch)
        epoch_loss = weighted / len(order)
        state.epoch += 1
        if state.epoch % config.eval_every == 0:
            evaluate_now(epoch_loss)
    if state.best_tables is None:
        evaluate_now(epoch_loss)
    return TrainResult(state.best_params(), list(state.log), state)
