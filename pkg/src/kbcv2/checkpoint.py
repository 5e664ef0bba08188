"""Lossless save/load of parameters, optimiser state and training progress.

A checkpoint is an uncompressed ``.npz`` archive.  The ``header`` member is
UTF-8 JSON holding the format version, model metadata, loop counters and
both random-generator states; every table is stored under ``params/<name>``,
``accum/<name>`` and (when present) ``best/<name>``.
"""

from __future__ import annotations

import io
import json
import os
import zipfile

import numpy as np

from .models import ModelKind, ModelParams
from .training import OptState, TrainState

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save_checkpoint(path: str | os.PathLike, state: TrainState) -> None:
    p = state.params
    header = {
        "version": FORMAT_VERSION,
        "kind": p.kind.value,
        "dim": p.dim,
        "n_entities": p.n_entities,
        "n_relations": p.n_relations,
        "reciprocal": p.reciprocal,
        "simple_variant": p.simple_variant,
        "eps": state.opt.eps,
        "epoch": state.epoch,
        "best_mrr": state.best_mrr,
        "best_epoch": state.best_epoch,
        "bad_evals": state.bad_evals,
        "stopped": state.stopped,
        "elapsed": state.elapsed,
        "log": state.log,
        "shuffle_rng": _rng_state(state.shuffle_rng),
        "sample_rng": _rng_state(state.sample_rng),
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)}
    for name, table in p.tables.items():
        arrays[f"params/{name}"] = table
        arrays[f"accum/{name}"] = state.opt.accum[name]
        if state.best_tables is not None:
            arrays[f"best/{name}"] = state.best_tables[name]
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, array in arrays.items():
            # fixed timestamps keep identical states byte-identical on disk
            with zf.open(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), "w") as member:
                np.lib.format.write_array(member, np.ascontiguousarray(array), allow_pickle=False)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, expect_kind: ModelKind | str | None = None) -> TrainState:
    """Load a checkpoint written by :func:`save_checkpoint`.

    Raises :class:`CheckpointError` on truncation, a version mismatch, or a
    model kind different from ``expect_kind``.
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (zipfile.BadZipFile, EOFError, ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint ({exc})") from exc
    if "header" not in arrays:
        raise CheckpointError(f"{path}: missing header")
    header = json.loads(arrays["header"].tobytes().decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {header.get('version')}, expected {FORMAT_VERSION}")
    kind = ModelKind.parse(header["kind"])
    if expect_kind is not None and ModelKind.parse(expect_kind) is not kind:
        raise CheckpointError(
            f"{path}: checkpoint holds a {kind.value} model, expected {ModelKind.parse(expect_kind).value}"
        )
    names = sorted(k.split("/", 1)[1] for k in arrays if k.startswith("params/"))
    params = ModelParams(
        kind=kind,
        dim=header["dim"],
        n_entities=header["n_entities"],
        n_relations=header["n_relations"],
        reciprocal=header["reciprocal"],
        tables={n: arrays[f"params/{n}"] for n in names},
        simple_variant=header["simple_variant"],
    )
    best = {n: arrays[f"best/{n}"] for n in names} if f"best/{names[0]}" in arrays else None
    return TrainState(
        params=params,
        opt=OptState({n: arrays[f"accum/{n}"] for n in names}, header["eps"]),
        shuffle_rng=_restore_rng(header["shuffle_rng"]),
        sample_rng=_restore_rng(header["sample_rng"]),
        epoch=header["epoch"],
        best_tables=best,
        best_mrr=header["best_mrr"],
        best_epoch=header["best_epoch"],
        bad_evals=header["bad_evals"],
        stopped=header["stopped"],
        elapsed=header["elapsed"],
        log=header["log"],
    )
