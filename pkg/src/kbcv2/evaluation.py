"""Filtered link-prediction metrics: ranks, MRR and HITS@k."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .kb import FilterIndex, KnowledgeBase
from .models import ModelParams, score_1n_head, score_1n_tail

EVAL_BATCH = 256


@dataclass(frozen=True)
class DirectionReport:
    mrr: float
    hits1: float
    hits10: float
    query_count: int


@dataclass(frozen=True)
class EvalReport:
    split: str
    mrr: float
    hits1: float
    hits10: float
    head: DirectionReport
    tail: DirectionReport
    query_count: int

    def to_record(self) -> dict:
        record = {"split": self.split, "mrr": self.mrr, "hits1": self.hits1, "hits10": self.hits10}
        for side in ("head", "tail"):
            for key, value in asdict(getattr(self, side)).items():
                record[f"{side}.{key}"] = value
        record["query_count"] = self.query_count
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))


def filtered_rank(scores, gold: int, filter_set) -> float:
    """Rank of ``gold`` among candidates not known to be true.

    Other known-true entities in ``filter_set`` are removed; ties with the
    gold count half, which is the expected rank under random tie-breaking.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= gold < scores.shape[0]:
        raise IndexError(f"gold id {gold} out of range [0, {scores.shape[0]})")
    keep = np.ones(scores.shape[0], dtype=bool)
    keep[np.fromiter(filter_set, dtype=np.int64, count=len(filter_set))] = False
    keep[gold] = False
    others = scores[keep]
    target = scores[gold]
    return 1.0 + np.count_nonzero(others > target) + np.count_nonzero(others == target) / 2.0


def _batch_ranks(scores: np.ndarray, gold: np.ndarray, filters: list) -> np.ndarray:
    S = scores.astype(np.float64, copy=True)
    rows = np.arange(len(gold))
    target = S[rows, gold]
    counts = [len(f) for f in filters]
    if sum(counts):
        r_idx = np.repeat(rows, counts)
        c_idx = np.fromiter((c for f in filters for c in f), dtype=np.int64, count=sum(counts))
        S[r_idx, c_idx] = np.nan
    S[rows, gold] = np.nan
    # NaN compares false, so masked entries drop out of both counts
    greater = np.count_nonzero(S > target[:, None], axis=1)
    ties = np.count_nonzero(S == target[:, None], axis=1)
    return 1.0 + greater + ties / 2.0


def tail_ranks(p: ModelParams, triples: np.ndarray, index: FilterIndex, batch_size: int = EVAL_BATCH) -> np.ndarray:
    out = np.empty(len(triples))
    for start in range(0, len(triples), batch_size):
        t = triples[start : start + batch_size]
        S = score_1n_tail(p, t[:, [0, 1]])
        out[start : start + len(t)] = _batch_ranks(S, t[:, 2], [index.tails(s, r) for s, r, _ in t.tolist()])
    return out


def head_ranks(p: ModelParams, triples: np.ndarray, index: FilterIndex, batch_size: int = EVAL_BATCH) -> np.ndarray:
    out = np.empty(len(triples))
    for start in range(0, len(triples), batch_size):
        t = triples[start : start + batch_size]
        S = score_1n_head(p, t[:, [1, 2]])
        out[start : start + len(t)] = _batch_ranks(S, t[:, 0], [index.heads(r, o) for _, r, o in t.tolist()])
    return out


def _summary(ranks: np.ndarray) -> DirectionReport:
    return DirectionReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits1=float(np.mean(ranks <= 1)),
        hits10=float(np.mean(ranks <= 10)),
        query_count=int(len(ranks)),
    )


def evaluate(
    p: ModelParams,
    kb: KnowledgeBase,
    index: FilterIndex,
    split: str = "valid",
    batch_size: int = EVAL_BATCH,
) -> EvalReport:
    """Filtered MRR / HITS@1 / HITS@10 over both query directions of a split."""
    triples = kb.split(split)
    if not len(triples):
        raise ValueError("empty evaluation")
    tails = tail_ranks(p, triples, index, batch_size)
    heads = head_ranks(p, triples, index, batch_size)
    both = _summary(np.concatenate([tails, heads]))
    return EvalReport(
        split=split,
        mrr=both.mrr,
        hits1=both.hits1,
        hits10=both.hits10,
        head=_summary(heads),
        tail=_summary(tails),
        query_count=both.query_count,
    )


def mrr_only(
    p: ModelParams,
    kb: KnowledgeBase,
    index: FilterIndex,
    split: str = "valid",
    sample: int | None = None,
    batch_size: int = EVAL_BATCH,
) -> float:
    """MRR over the first ``sample`` queries, ordered tail_0, head_0, tail_1, head_1, ...

    Without a cap this equals ``evaluate(...).mrr`` up to summation order.
    """
    triples = kb.split(split)
    total = 2 * len(triples)
    if sample is None:
        sample = total
    if sample <= 0 or total == 0:
        raise ValueError("empty evaluation")
    if sample > total:
        raise ValueError(f"sample {sample} exceeds the {total} available queries")
    n_tail, n_head = (sample + 1) // 2, sample // 2
    ranks = np.concatenate(
        [
            tail_ranks(p, triples[:n_tail], index, batch_size),
            head_ranks(p, triples[:n_head], index, batch_size),
        ]
    )
    return float(np.mean(1.0 / ranks))
