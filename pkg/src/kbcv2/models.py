"""Scoring functions, parameter layouts and analytic gradients.

Complex-valued tables use an interleaved real layout: ``x[..., 2j]`` is the
real part and ``x[..., 2j + 1]`` the imaginary part of component ``j``, so a
row of ``dim`` reals carries ``dim // 2`` complex numbers.  RotatE relations
are stored as ``dim // 2`` phase angles.

Every link-prediction query reduces to one of two shapes:

* multiplicative (ComplEx, SimplE): ``score[b, c] = sum_k q_k[b] . T_k[c]``
  for one or more query vectors ``q_k`` and entity tables ``T_k``;
* translational (TransE, RotatE): ``score[b, c] = -||f[b] - E[c]||`` for a
  query centre ``f``.

Both shapes share one forward/backward implementation for full (1-N),
chunked and sampled candidate sets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TAIL = "tail"
HEAD = "head"
DEFAULT_CHUNK = 1024
SIMPLE_VARIANTS = ("printed", "original")


class ModelKind(str, enum.Enum):
    TRANSE = "TransE"
    ROTATE = "RotatE"
    COMPLEX = "ComplEx"
    SIMPLE = "SimplE"

    @classmethod
    def parse(cls, name: str | ModelKind) -> ModelKind:
        if isinstance(name, ModelKind):
            return name
        for kind in cls:
            if kind.value.lower() == str(name).lower():
                return kind
        raise ValueError(f"unknown model kind {name!r}; expected one of {[k.value for k in cls]}")

    @property
    def multiplicative(self) -> bool:
        return self in (ModelKind.COMPLEX, ModelKind.SIMPLE)

    @property
    def complex_layout(self) -> bool:
        return self is not ModelKind.TRANSE


@dataclass(eq=False)
class ModelParams:
    """Embedding tables of one model.

    ``tables`` maps table names to 2-D arrays: ``entity`` and ``relation``
    for TransE/RotatE/ComplEx, ``head``, ``tail`` and ``relation`` for SimplE.
    Relation rows ``n_relations .. 2 * n_relations - 1`` hold inverse
    relations when the model is reciprocal (always, for SimplE).
    """

    kind: ModelKind
    dim: int
    n_entities: int
    n_relations: int
    reciprocal: bool
    tables: dict[str, np.ndarray]
    simple_variant: str = "printed"

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.kind.complex_layout and self.dim % 2:
            raise ValueError(f"{self.kind.value} needs an even dim, got {self.dim}")
        if self.simple_variant not in SIMPLE_VARIANTS:
            raise ValueError(f"simple_variant must be one of {SIMPLE_VARIANTS}")
        expected = {name: (self.n_entities, self.dim) for name in self.entity_tables}
        expected["relation"] = (self.relation_rows, self.relation_width)
        if set(self.tables) != set(expected):
            raise ValueError(f"{self.kind.value} expects tables {sorted(expected)}, got {sorted(self.tables)}")
        for name, shape in expected.items():
            if self.tables[name].shape != shape:
                raise ValueError(f"table {name!r} has shape {self.tables[name].shape}, expected {shape}")

    @property
    def entity_tables(self) -> tuple[str, ...]:
        return ("head", "tail") if self.kind is ModelKind.SIMPLE else ("entity",)

    @property
    def relation_rows(self) -> int:
        if self.kind is ModelKind.SIMPLE or self.reciprocal:
            return 2 * self.n_relations
        return self.n_relations

    @property
    def relation_width(self) -> int:
        return self.dim // 2 if self.kind is ModelKind.ROTATE else self.dim

    @property
    def dtype(self) -> np.dtype:
        return self.tables["relation"].dtype

    def inverse_row(self, rel):
        """Row holding the inverse of relation row ``rel``."""
        if self.relation_rows != 2 * self.n_relations:
            raise ValueError("model has no inverse relation rows")
        rel = np.asarray(rel)
        return np.where(rel < self.n_relations, rel + self.n_relations, rel - self.n_relations)

    def copy(self) -> ModelParams:
        return ModelParams(
            self.kind,
            self.dim,
            self.n_entities,
            self.n_relations,
            self.reciprocal,
            {k: v.copy() for k, v in self.tables.items()},
            self.simple_variant,
        )

    def zeros(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tables.items()}


def init_params(
    kind: ModelKind | str,
    n_entities: int,
    n_relations: int,
    dim: int,
    reciprocal: bool = False,
    rng: np.random.Generator | int | None = None,
    std: float = 1e-2,
    dtype=np.float64,
    simple_variant: str = "printed",
) -> ModelParams:
    """Gaussian-initialised tables; RotatE phases are uniform in [-pi, pi)."""
    kind = ModelKind.parse(kind)
    rng = np.random.default_rng(rng)
    if kind.complex_layout and dim % 2:
        raise ValueError(f"{kind.value} needs an even dim, got {dim}")
    ent_names = ("head", "tail") if kind is ModelKind.SIMPLE else ("entity",)
    rel_rows = 2 * n_relations if (kind is ModelKind.SIMPLE or reciprocal) else n_relations
    tables = {name: (std * rng.standard_normal((n_entities, dim))).astype(dtype) for name in ent_names}
    if kind is ModelKind.ROTATE:
        tables["relation"] = rng.uniform(-np.pi, np.pi, (rel_rows, dim // 2)).astype(dtype)
    else:
        tables["relation"] = (std * rng.standard_normal((rel_rows, dim))).astype(dtype)
    return ModelParams(kind, dim, n_entities, n_relations, reciprocal, tables, simple_variant)


# -- complex helpers on the interleaved layout ---------------------------------


def _split(x):
    return x[..., 0::2], x[..., 1::2]


def _join(re, im):
    out = np.empty(re.shape[:-1] + (2 * re.shape[-1],), dtype=np.result_type(re, im))
    out[..., 0::2] = re
    out[..., 1::2] = im
    return out


def _rotate(x, theta):
    c, s = np.cos(theta), np.sin(theta)
    xr, xi = _split(x)
    return _join(xr * c - xi * s, xr * s + xi * c)


def _rotate_backward(g, x_rot, theta):
    """Gradients of ``_rotate(x, theta)`` w.r.t. ``x`` and ``theta`` given upstream ``g``."""
    c, s = np.cos(theta), np.sin(theta)
    gr, gi = _split(g)
    fr, fi = _split(x_rot)
    return _join(gr * c + gi * s, -gr * s + gi * c), gi * fr - gr * fi


def _scatter(grads, table, rows, vals):
    np.add.at(grads[table], rows, vals)


def _safe_unit(diff, norm):
    """``diff / norm`` with the zero-norm case mapped to zero."""
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = diff / norm[..., None]
    unit[norm == 0] = 0.0
    return unit


# -- per-kind scoring ----------------------------------------------------------


@dataclass
class _Query:
    """Query-side quantities plus the chain rule back into the parameters."""

    terms: list[tuple[np.ndarray, str]] = field(default_factory=list)
    center: np.ndarray | None = None
    backward: Callable = None


class _TransE:
    def score(self, p, s, r, o):
        E, R = p.tables["entity"], p.tables["relation"]
        d = E[s] + R[r] - E[o]
        return -np.sqrt(np.einsum("bd,bd->b", d, d))

    def grad(self, p, s, r, o, up, grads):
        E, R = p.tables["entity"], p.tables["relation"]
        d = E[s] + R[r] - E[o]
        unit = _safe_unit(d, np.sqrt(np.einsum("bd,bd->b", d, d)))
        g = -up[:, None] * unit
        _scatter(grads, "entity", s, g)
        _scatter(grads, "relation", r, g)
        _scatter(grads, "entity", o, -g)

    def query(self, p, anchor, rel, side):
        E, R = p.tables["entity"], p.tables["relation"]
        sign = 1.0 if side == TAIL else -1.0

        def backward(d_center, grads):
            _scatter(grads, "entity", anchor, d_center)
            _scatter(grads, "relation", rel, sign * d_center)

        return _Query(center=E[anchor] + sign * R[rel], backward=backward)


class _RotatE:
    def score(self, p, s, r, o):
        E, R = p.tables["entity"], p.tables["relation"]
        d = _rotate(E[s], R[r]) - E[o]
        return -np.sqrt(np.einsum("bd,bd->b", d, d))

    def grad(self, p, s, r, o, up, grads):
        E, R = p.tables["entity"], p.tables["relation"]
        rot = _rotate(E[s], R[r])
        d = rot - E[o]
        g = -up[:, None] * _safe_unit(d, np.sqrt(np.einsum("bd,bd->b", d, d)))
        g_s, g_theta = _rotate_backward(g, rot, R[r])
        _scatter(grads, "entity", s, g_s)
        _scatter(grads, "relation", r, g_theta)
        _scatter(grads, "entity", o, -g)

    def query(self, p, anchor, rel, side):
        E, R = p.tables["entity"], p.tables["relation"]
        # head side: ||c * r - o|| = ||c - o * conj(r)|| because |r| = 1
        theta = R[rel] if side == TAIL else -R[rel]
        center = _rotate(E[anchor], theta)

        def backward(d_center, grads):
            g_x, g_theta = _rotate_backward(d_center, center, theta)
            _scatter(grads, "entity", anchor, g_x)
            _scatter(grads, "relation", rel, g_theta if side == TAIL else -g_theta)

        return _Query(center=center, backward=backward)


class _ComplEx:
    def score(self, p, s, r, o):
        E, R = p.tables["entity"], p.tables["relation"]
        sr, si = _split(E[s])
        rr, ri = _split(R[r])
        orr, oi = _split(E[o])
        # Re(s * r * conj(o))
        return np.sum((sr * rr - si * ri) * orr + (sr * ri + si * rr) * oi, axis=-1)

    def grad(self, p, s, r, o, up, grads):
        E, R = p.tables["entity"], p.tables["relation"]
        sr, si = _split(E[s])
        rr, ri = _split(R[r])
        orr, oi = _split(E[o])
        u = up[:, None]
        g_s = _join(rr * orr + ri * oi, rr * oi - ri * orr)
        g_r = _join(sr * orr + si * oi, sr * oi - si * orr)
        g_o = _join(sr * rr - si * ri, sr * ri + si * rr)
        _scatter(grads, "entity", s, u * g_s)
        _scatter(grads, "relation", r, u * g_r)
        _scatter(grads, "entity", o, u * g_o)

    def query(self, p, anchor, rel, side):
        E, R = p.tables["entity"], p.tables["relation"]
        ar, ai = _split(E[anchor])
        rr, ri = _split(R[rel])
        if side == TAIL:
            # q = s * r, score = Re(q * conj(c))
            q = _join(ar * rr - ai * ri, ar * ri + ai * rr)

            def backward(dqs, grads):
                dr_, di_ = _split(dqs[0])
                _scatter(grads, "entity", anchor, _join(dr_ * rr + di_ * ri, -dr_ * ri + di_ * rr))
                _scatter(grads, "relation", rel, _join(dr_ * ar + di_ * ai, -dr_ * ai + di_ * ar))

        else:
            # score = Re(c * r * conj(o)) = c_re * q_re + c_im * q_im
            q = _join(rr * ar + ri * ai, rr * ai - ri * ar)

            def backward(dqs, grads):
                dr_, di_ = _split(dqs[0])
                _scatter(grads, "relation", rel, _join(dr_ * ar + di_ * ai, dr_ * ai - di_ * ar))
                _scatter(grads, "entity", anchor, _join(dr_ * rr - di_ * ri, dr_ * ri + di_ * rr))

        return _Query(terms=[(q, "entity")], backward=backward)


class _SimplE:
    """Real 3-way products over separate head and tail entity tables.

    ``printed``:  0.5 * (<h_s, r, t_o> + <t_o, r_inv, h_s>)
    ``original``: 0.5 * (<h_s, r, t_o> + <h_o, r_inv, t_s>)
    """

    def score(self, p, s, r, o):
        H, T, R = p.tables["head"], p.tables["tail"], p.tables["relation"]
        ri = p.inverse_row(r)
        first = np.sum(H[s] * R[r] * T[o], axis=-1)
        if p.simple_variant == "printed":
            second = np.sum(T[o] * R[ri] * H[s], axis=-1)
        else:
            second = np.sum(H[o] * R[ri] * T[s], axis=-1)
        return 0.5 * (first + second)

    def grad(self, p, s, r, o, up, grads):
        H, T, R = p.tables["head"], p.tables["tail"], p.tables["relation"]
        ri = p.inverse_row(r)
        u = 0.5 * up[:, None]
        hs, to, rf, rb = H[s], T[o], R[r], R[ri]
        _scatter(grads, "relation", r, u * hs * to)
        if p.simple_variant == "printed":
            _scatter(grads, "head", s, u * (rf + rb) * to)
            _scatter(grads, "tail", o, u * (rf + rb) * hs)
            _scatter(grads, "relation", ri, u * hs * to)
        else:
            ho, ts = H[o], T[s]
            _scatter(grads, "head", s, u * rf * to)
            _scatter(grads, "tail", o, u * rf * hs)
            _scatter(grads, "head", o, u * rb * ts)
            _scatter(grads, "tail", s, u * rb * ho)
            _scatter(grads, "relation", ri, u * ho * ts)

    def query(self, p, anchor, rel, side):
        R = p.tables["relation"]
        inv = p.inverse_row(rel)
        rf, rb = R[rel], R[inv]
        # anchor tables: (table multiplying the forward relation, table multiplying the inverse)
        if side == TAIL:
            a_fwd, a_inv, c_fwd, c_inv = "head", "tail", "tail", "head"
        else:
            a_fwd, a_inv, c_fwd, c_inv = "tail", "head", "head", "tail"
        af = p.tables[a_fwd][anchor]
        if p.simple_variant == "printed":
            q = 0.5 * af * (rf + rb)

            def backward(dqs, grads):
                dq = 0.5 * dqs[0]
                _scatter(grads, a_fwd, anchor, dq * (rf + rb))
                _scatter(grads, "relation", rel, dq * af)
                _scatter(grads, "relation", inv, dq * af)

            return _Query(terms=[(q, c_fwd)], backward=backward)

        ab = p.tables[a_inv][anchor]

        def backward(dqs, grads):
            d1, d2 = 0.5 * dqs[0], 0.5 * dqs[1]
            _scatter(grads, a_fwd, anchor, d1 * rf)
            _scatter(grads, "relation", rel, d1 * af)
            _scatter(grads, a_inv, anchor, d2 * rb)
            _scatter(grads, "relation", inv, d2 * ab)

        return _Query(terms=[(0.5 * af * rf, c_fwd), (0.5 * ab * rb, c_inv)], backward=backward)


_SCORERS = {
    ModelKind.TRANSE: _TransE(),
    ModelKind.ROTATE: _RotatE(),
    ModelKind.COMPLEX: _ComplEx(),
    ModelKind.SIMPLE: _SimplE(),
}


# -- validation ----------------------------------------------------------------


def _check_ids(ids, limit, what):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= limit):
        bad = ids[(ids < 0) | (ids >= limit)][0]
        raise IndexError(f"{what} id {bad} out of range [0, {limit})")
    return ids


def _check_triples(p, s, r, o):
    return (
        _check_ids(s, p.n_entities, "entity"),
        _check_ids(r, p.relation_rows, "relation row"),
        _check_ids(o, p.n_entities, "entity"),
    )


# -- batched primitives used by training and evaluation ------------------------


def score_triples(p: ModelParams, s, r, o) -> np.ndarray:
    """1-1 scores of aligned id arrays ``(s[i], r[i], o[i])``."""
    s, r, o = _check_triples(p, s, r, o)
    return _SCORERS[p.kind].score(p, s, r, o)


def backward_triples(p: ModelParams, s, r, o, upstream, grads: dict[str, np.ndarray]) -> None:
    """Accumulate ``sum_i upstream[i] * d score(s_i, r_i, o_i)`` into ``grads``."""
    s, r, o = _check_triples(p, s, r, o)
    up = np.asarray(upstream, dtype=p.dtype).reshape(-1)
    _SCORERS[p.kind].grad(p, s, r, o, np.broadcast_to(up, s.shape).copy(), grads)


def triple_of_query(anchor, rel, side, candidate):
    """Map a query plus candidate entity back to the scored ``(s, r, o)``."""
    return (anchor, rel, candidate) if side == TAIL else (candidate, rel, anchor)


def _chunks(n: int, chunk: int | None):
    step = n if not chunk or chunk >= n else chunk
    return [slice(i, min(i + step, n)) for i in range(0, max(n, 1), step)] if n else []


def _candidate_rows(table, candidates, sl):
    if candidates is None:
        return table[sl]
    return table[candidates[sl]]


def score_candidates(
    p: ModelParams,
    anchor,
    rel,
    side: str,
    candidates: np.ndarray | None = None,
    chunk: int | None = None,
) -> np.ndarray:
    """Score each query against a candidate set (all entities when ``candidates`` is None).

    Multiplicative kinds use a single matrix product unless ``chunk`` is
    given; translation kinds materialise at most ``B x chunk x dim`` reals at
    a time (``DEFAULT_CHUNK`` when unset).
    """
    anchor = _check_ids(anchor, p.n_entities, "entity")
    rel = _check_ids(rel, p.relation_rows, "relation row")
    n_cand = p.n_entities if candidates is None else len(candidates)
    if candidates is not None:
        candidates = _check_ids(candidates, p.n_entities, "entity")
    query = _SCORERS[p.kind].query(p, anchor, rel, side)
    out = np.empty((len(anchor), n_cand), dtype=p.dtype)
    if p.kind.multiplicative:
        for sl in _chunks(n_cand, chunk):
            acc = None
            for q, table in query.terms:
                part = q @ _candidate_rows(p.tables[table], candidates, sl).T
                acc = part if acc is None else acc + part
            out[:, sl] = acc
        return out
    f = query.center
    for sl in _chunks(n_cand, chunk or DEFAULT_CHUNK):
        diff = f[:, None, :] - _candidate_rows(p.tables["entity"], candidates, sl)[None, :, :]
        out[:, sl] = -np.sqrt(np.einsum("bcd,bcd->bc", diff, diff))
    return out


def backward_candidates(
    p: ModelParams,
    anchor,
    rel,
    side: str,
    dscores: np.ndarray,
    grads: dict[str, np.ndarray],
    candidates: np.ndarray | None = None,
    chunk: int | None = None,
) -> None:
    """Accumulate the gradient of ``sum(dscores * score_candidates(...))`` into ``grads``."""
    anchor = _check_ids(anchor, p.n_entities, "entity")
    rel = _check_ids(rel, p.relation_rows, "relation row")
    if candidates is not None:
        candidates = _check_ids(candidates, p.n_entities, "entity")
    n_cand = dscores.shape[1]
    query = _SCORERS[p.kind].query(p, anchor, rel, side)

    def put(table, sl, vals):
        if candidates is None:
            grads[table][sl] += vals
        else:
            np.add.at(grads[table], candidates[sl], vals)

    if p.kind.multiplicative:
        dqs = [np.zeros_like(q) for q, _ in query.terms]
        for sl in _chunks(n_cand, chunk):
            ds = dscores[:, sl]
            for k, (q, table) in enumerate(query.terms):
                put(table, sl, ds.T @ q)
                dqs[k] += ds @ _candidate_rows(p.tables[table], candidates, sl)
        query.backward(dqs, grads)
        return
    f = query.center
    d_center = np.zeros_like(f)
    for sl in _chunks(n_cand, chunk or DEFAULT_CHUNK):
        diff = f[:, None, :] - _candidate_rows(p.tables["entity"], candidates, sl)[None, :, :]
        norm = np.sqrt(np.einsum("bcd,bcd->bc", diff, diff))
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(norm > 0, dscores[:, sl] / norm, 0.0)
        # score = -||f - e_c||: d/df = -diff/||.||, d/de_c = +diff/||.||
        d_center -= np.einsum("bc,bcd->bd", w, diff)
        put("entity", sl, np.einsum("bc,bcd->cd", w, diff))
    query.backward(d_center, grads)


# -- public single-query API ---------------------------------------------------


def score_one(p: ModelParams, s: int, r: int, o: int) -> float:
    """Score one triple; ``r`` indexes the (possibly reciprocal-augmented) relation table."""
    return float(score_triples(p, [s], [r], [o])[0])


def score_1n_tail(p: ModelParams, batch, chunk: int | None = None) -> np.ndarray:
    """Scores of ``(s, r, ?)`` queries against every entity; ``batch`` holds ``(s, r)`` rows."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    return score_candidates(p, batch[:, 0], batch[:, 1], TAIL, chunk=chunk)


def head_query(p: ModelParams, rel, obj):
    """``(anchor, relation row, side)`` answering ``(?, rel, obj)`` for this model."""
    if p.reciprocal:
        return np.asarray(obj), p.inverse_row(rel), TAIL
    return np.asarray(obj), np.asarray(rel), HEAD


def score_1n_head(p: ModelParams, batch, chunk: int | None = None) -> np.ndarray:
    """Scores of ``(?, r, o)`` queries against every entity; ``batch`` holds ``(r, o)`` rows.

    Reciprocal models answer through the inverse relation row as a tail query.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    _check_ids(batch[:, 0], p.relation_rows, "relation row")
    anchor, rel, side = head_query(p, batch[:, 0], batch[:, 1])
    return score_candidates(p, anchor, rel, side, chunk=chunk)


def touched_rows(p: ModelParams, s, r, o) -> dict[str, np.ndarray]:
    """Rows read by ``score_triples(s, r, o)``, with multiplicity."""
    s, r, o = (np.asarray(x, dtype=np.int64).reshape(-1) for x in (s, r, o))
    if p.kind is ModelKind.SIMPLE:
        rel = np.concatenate([r, p.inverse_row(r)])
        if p.simple_variant == "printed":
            return {"head": s, "tail": o, "relation": rel}
        return {"head": np.concatenate([s, o]), "tail": np.concatenate([o, s]), "relation": rel}
    return {"entity": np.concatenate([s, o]), "relation": r}


def grad_one(p: ModelParams, s: int, r: int, o: int, upstream: float = 1.0) -> dict[tuple[str, int], np.ndarray]:
    """Gradient of ``upstream * score_one(p, s, r, o)`` as ``{(table, row): vector}``.

    RotatE relation gradients are taken w.r.t. the phase angles.
    """
    grads = p.zeros()
    backward_triples(p, [s], [r], [o], [upstream], grads)
    out = {}
    for table, rows in touched_rows(p, s, r, o).items():
        for row in dict.fromkeys(rows.tolist()):
            out[(table, row)] = grads[table][row].copy()
    return out
