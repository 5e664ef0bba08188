"""Triple ingestion, integer vocabularies and the filtered-evaluation index."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    """Raised when a triple file is missing or malformed."""


class Triple(NamedTuple):
    s: int
    r: int
    o: int


def load_split(path: str | os.PathLike) -> list[tuple[str, str, str]]:
    """Read a tab-separated triple file, one ``subject<TAB>relation<TAB>object`` per line.

    Empty lines are skipped and whitespace around each field is stripped.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DatasetError(f"{path}: no such file")
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip(" "):
                continue
            fields = [x.strip() for x in line.split("\t")]
            if len(fields) != 3 or not all(fields):
                raise DatasetError(f"line {lineno}: expected 3 tab-separated fields")
            triples.append((fields[0], fields[1], fields[2]))
    if not triples:
        raise DatasetError(f"{path}: empty file")
    return triples


@dataclass(frozen=True, eq=False)
class KnowledgeBase:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entity_ids: dict[str, int] = field(repr=False)
    relation_ids: dict[str, int] = field(repr=False)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def decode(self, triples: np.ndarray) -> list[tuple[str, str, str]]:
        return [(self.entities[s], self.relations[r], self.entities[o]) for s, r, o in triples]


def _as_array(rows: list[tuple[int, int, int]]) -> np.ndarray:
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    arr.setflags(write=False)
    return arr


def build_kb(
    train: Iterable[tuple[str, str, str]],
    valid: Iterable[tuple[str, str, str]],
    test: Iterable[tuple[str, str, str]],
) -> KnowledgeBase:
    """Encode string triples with ids assigned in first-appearance order.

    The scan runs over train, then valid, then test; within a triple the
    subject is seen before the object.
    """
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    encoded = []
    for split in (train, valid, test):
        rows = []
        for s, r, o in split:
            s_id = entity_ids.setdefault(s, len(entity_ids))
            r_id = relation_ids.setdefault(r, len(relation_ids))
            o_id = entity_ids.setdefault(o, len(entity_ids))
            rows.append((s_id, r_id, o_id))
        encoded.append(_as_array(rows))
    return KnowledgeBase(
        entities=tuple(entity_ids),
        relations=tuple(relation_ids),
        train=encoded[0],
        valid=encoded[1],
        test=encoded[2],
        entity_ids=entity_ids,
        relation_ids=relation_ids,
    )


def load_kb(dataset_dir: str | os.PathLike) -> KnowledgeBase:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from a dataset directory."""
    raw = [load_split(os.path.join(dataset_dir, f"{name}.txt")) for name in SPLITS]
    return build_kb(*raw)


@dataclass(frozen=True)
class FilterIndex:
    """Known-true answers for every (s, r) and (r, o) pair across all splits."""

    tail_true: dict[tuple[int, int], frozenset[int]]
    head_true: dict[tuple[int, int], frozenset[int]]

    def tails(self, s: int, r: int) -> frozenset[int]:
        return self.tail_true.get((s, r), frozenset())

    def heads(self, r: int, o: int) -> frozenset[int]:
        return self.head_true.get((r, o), frozenset())


def build_filter_index(kb: KnowledgeBase) -> FilterIndex:
    tails: dict[tuple[int, int], set[int]] = {}
    heads: dict[tuple[int, int], set[int]] = {}
    for name in SPLITS:
        for s, r, o in kb.split(name).tolist():
            tails.setdefault((s, r), set()).add(o)
            heads.setdefault((r, o), set()).add(s)
    return FilterIndex(
        tail_true={k: frozenset(v) for k, v in tails.items()},
        head_true={k: frozenset(v) for k, v in heads.items()},
    )
