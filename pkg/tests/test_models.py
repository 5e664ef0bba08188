import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbcv2.models import (
    HEAD,
    TAIL,
    ModelKind,
    ModelParams,
    backward_candidates,
    grad_one,
    init_params,
    score_1n_head,
    score_1n_tail,
    score_candidates,
    score_one,
)
from oracles import finite_difference, oracle_score, rel_error

KINDS = list(ModelKind)


def make(kind, n_ent=6, n_rel=3, dim=4, reciprocal=False, seed=0, std=1.0, **kw):
    return init_params(kind, n_ent, n_rel, dim, reciprocal=reciprocal, rng=seed, std=std, **kw)


def set_rows(p, **rows):
    for key, value in rows.items():
        table, row = key.rsplit("_", 1)
        p.tables[table][int(row)] = value


# -- scoring examples ------------------------------------------------------------


def test_transe_exact_translation_scores_zero():
    p = make("TransE", dim=2)
    set_rows(p, entity_0=[1.0, 2.0], relation_0=[0.5, -1.0], entity_1=[1.5, 1.0])
    assert score_one(p, 0, 0, 1) == 0.0


def test_transe_345():
    p = make("TransE", dim=2)
    set_rows(p, entity_0=[0.0, 0.0], relation_0=[0.0, 0.0], entity_1=[3.0, 4.0])
    assert score_one(p, 0, 0, 1) == pytest.approx(-5.0)


def test_complex_identity_product():
    p = make("ComplEx", dim=2)
    set_rows(p, entity_0=[1.0, 0.0], relation_0=[1.0, 0.0], entity_1=[1.0, 0.0])
    assert score_one(p, 0, 0, 1) == pytest.approx(1.0)


def test_rotate_zero_phase_is_plain_distance():
    p = make("RotatE", dim=6)
    p.tables["relation"][:] = 0.0
    E = p.tables["entity"]
    assert score_one(p, 1, 2, 4) == pytest.approx(-np.linalg.norm(E[1] - E[4]), abs=1e-14)


@pytest.mark.parametrize("variant", ["printed", "original"])
def test_simple_unit_example(variant):
    # h = t = r = r_inv = (1, 0): 0.5 * (1 + 1) = 1
    p = make("SimplE", n_rel=1, dim=2, simple_variant=variant)
    for name in ("head", "tail", "relation"):
        p.tables[name][:] = [1.0, 0.0]
    assert score_one(p, 0, 0, 1) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("variant", ["printed", "original"])
def test_score_one_matches_oracle(kind, variant):
    rng = np.random.default_rng(1)
    p = make(kind, n_ent=8, n_rel=3, dim=6, reciprocal=True, seed=2, simple_variant=variant)
    for _ in range(50):
        s, o = rng.integers(8, size=2)
        r = rng.integers(p.relation_rows)
        assert abs(score_one(p, s, r, o) - oracle_score(p, s, r, o)) < 1e-12


def test_simple_printed_and_original_differ():
    a = make("SimplE", seed=3, simple_variant="printed")
    b = a.copy()
    b.simple_variant = "original"
    assert score_one(a, 0, 1, 2) != pytest.approx(score_one(b, 0, 1, 2))


# -- layout and errors ------------------------------------------------------------


@pytest.mark.parametrize("kind", ["RotatE", "ComplEx", "SimplE"])
def test_odd_dim_rejected(kind):
    with pytest.raises(ValueError, match="even dim"):
        make(kind, dim=5)


def test_odd_dim_fine_for_transe():
    assert make("TransE", dim=5).dim == 5


def test_table_shapes():
    p = make("RotatE", n_ent=7, n_rel=3, dim=8, reciprocal=True)
    assert p.tables["entity"].shape == (7, 8)
    assert p.tables["relation"].shape == (6, 4)
    assert (p.tables["relation"] >= -np.pi).all() and (p.tables["relation"] < np.pi).all()
    s = make("SimplE", n_ent=7, n_rel=3, dim=8)
    assert s.tables["head"].shape == s.tables["tail"].shape == (7, 8)
    assert s.tables["relation"].shape == (6, 8)
    c = make("ComplEx", n_ent=7, n_rel=3, dim=8)
    assert c.relation_rows == 3


def test_shape_mismatch_rejected():
    p = make("ComplEx")
    with pytest.raises(ValueError, match="shape"):
        ModelParams(p.kind, p.dim, p.n_entities + 1, p.n_relations, False, p.tables)


@pytest.mark.parametrize("s, r, o", [(6, 0, 0), (0, 3, 0), (0, 0, -1)])
def test_score_one_out_of_range(s, r, o):
    p = make("ComplEx", n_ent=6, n_rel=3)
    with pytest.raises(IndexError, match="out of range"):
        score_one(p, s, r, o)


def test_parse_kind():
    assert ModelKind.parse("complex") is ModelKind.COMPLEX
    with pytest.raises(ValueError):
        ModelKind.parse("DistMult")


# -- 1-N paths --------------------------------------------------------------------


def looped_tail(p, batch):
    return np.array([[score_one(p, s, r, c) for c in range(p.n_entities)] for s, r in batch])


def looped_head(p, batch):
    if p.reciprocal:
        return np.array([[score_one(p, o, int(p.inverse_row(r)), c) for c in range(p.n_entities)] for r, o in batch])
    return np.array([[score_one(p, c, r, o) for c in range(p.n_entities)] for r, o in batch])


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("reciprocal", [False, True])
@pytest.mark.parametrize("variant", ["printed", "original"])
def test_one_n_matches_looped_score_one(kind, reciprocal, variant):
    rng = np.random.default_rng(4)
    for seed in range(10):
        p = make(kind, n_ent=10, n_rel=3, dim=8, reciprocal=reciprocal, seed=seed, simple_variant=variant)
        tail_batch = np.stack([rng.integers(10, size=4), rng.integers(p.relation_rows, size=4)], axis=1)
        head_batch = np.stack([rng.integers(3, size=4), rng.integers(10, size=4)], axis=1)
        assert np.max(np.abs(score_1n_tail(p, tail_batch) - looped_tail(p, tail_batch))) < 1e-10
        assert np.max(np.abs(score_1n_head(p, head_batch) - looped_head(p, head_batch))) < 1e-10


def test_single_query_row_equals_three_calls():
    p = make("ComplEx", n_ent=3)
    np.testing.assert_allclose(score_1n_tail(p, [[1, 2]])[0], [score_one(p, 1, 2, o) for o in range(3)], atol=1e-15)
    np.testing.assert_allclose(score_1n_head(p, [[2, 1]])[0], [score_one(p, c, 2, 1) for c in range(3)], atol=1e-15)


@pytest.mark.parametrize("kind", ["TransE", "RotatE"])
def test_translation_chunking_is_exact(kind):
    p = make(kind, n_ent=9, dim=6, seed=5)
    batch = [[0, 1], [3, 2], [8, 0]]
    np.testing.assert_array_equal(score_1n_tail(p, batch, chunk=2), score_1n_tail(p, batch, chunk=9))
    head_batch = [[1, 0], [2, 3], [0, 8]]
    np.testing.assert_array_equal(score_1n_head(p, head_batch, chunk=4), score_1n_head(p, head_batch, chunk=100))


@pytest.mark.parametrize("kind", KINDS)
def test_single_precision_one_n(kind):
    p = init_params(kind, 12, 2, 8, reciprocal=True, rng=0, std=1.0, dtype=np.float32)
    batch = [[0, 1], [5, 3], [11, 2]]
    scores = score_1n_tail(p, batch)
    assert scores.dtype == np.float32
    assert np.max(np.abs(scores - looped_tail(p, batch))) < 1e-4


def test_complex_head_equals_tail_under_conjugate_relation():
    p = make("ComplEx", n_ent=10, dim=8, seed=6)
    conj = p.copy()
    conj.tables["relation"][:, 1::2] *= -1
    head = score_1n_head(p, [[1, 4], [2, 7]])
    tail = score_1n_tail(conj, [[4, 1], [7, 2]])
    assert np.max(np.abs(head - tail)) < 1e-12


def test_simple_reciprocal_head_uses_inverse_row():
    p = make("SimplE", n_ent=10, n_rel=3, dim=8, reciprocal=True, seed=7)
    head = score_1n_head(p, [[1, 4]])
    tail = score_1n_tail(p, [[4, 4]])  # row 4 is the inverse of relation 1
    np.testing.assert_array_equal(head, tail)


def test_empty_candidate_set():
    p = make("ComplEx")
    assert score_candidates(p, [0], [0], TAIL, candidates=np.array([], dtype=np.int64)).shape == (1, 0)


# -- properties --------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), dim=st.sampled_from([2, 4, 8, 16]))
def test_complex_conjugation_symmetry(seed, dim):
    p = make("ComplEx", n_ent=5, dim=dim, seed=seed)
    conj = p.copy()
    conj.tables["relation"][:, 1::2] *= -1
    rng = np.random.default_rng(seed)
    s, o = rng.integers(5, size=2)
    r = rng.integers(3)
    assert abs(score_one(p, s, r, o) - score_one(conj, o, r, s)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["TransE", "RotatE"]))
def test_translation_scores_nonpositive(seed, kind):
    p = make(kind, n_ent=6, dim=4, seed=seed)
    assert (score_1n_tail(p, [[0, 0], [1, 1], [5, 2]]) <= 0).all()


def test_translation_zero_iff_exact_match():
    p = make("RotatE", dim=4, seed=8)
    theta = p.tables["relation"][1]
    z = p.tables["entity"][2, 0::2] + 1j * p.tables["entity"][2, 1::2]
    w = z * np.exp(1j * theta)
    p.tables["entity"][3, 0::2], p.tables["entity"][3, 1::2] = w.real, w.imag
    assert score_one(p, 2, 1, 3) == pytest.approx(0.0, abs=1e-15)
    assert score_one(p, 2, 1, 4) < 0


# -- gradients ------------------------------------------------------------------------


def check_grad_one(p, s, r, o, upstream=1.0):
    grads = grad_one(p, s, r, o, upstream)
    for (table, row), g in grads.items():
        num = finite_difference(lambda: upstream * score_one(p, s, r, o), p, table, row)
        assert rel_error(g, num) < 1e-4, (p.kind, table, row)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("dim", [2, 4, 8])
@pytest.mark.parametrize("variant", ["printed", "original"])
def test_grad_one_matches_finite_differences(kind, dim, variant):
    p = make(kind, n_ent=5, n_rel=2, dim=dim, reciprocal=True, seed=dim, simple_variant=variant)
    for s, r, o in [(0, 1, 2), (3, 2, 3), (4, 0, 1)]:
        check_grad_one(p, s, r, o, upstream=-0.7)


def test_grad_one_covers_expected_rows():
    assert set(grad_one(make("ComplEx"), 0, 1, 2)) == {("entity", 0), ("entity", 2), ("relation", 1)}
    keys = set(grad_one(make("SimplE", n_rel=3), 0, 1, 2))
    assert keys == {("head", 0), ("tail", 2), ("relation", 1), ("relation", 4)}


def test_transe_gradient_example():
    p = make("TransE", dim=2)
    set_rows(p, entity_0=[3.0, 4.0], relation_0=[0.0, 0.0], entity_1=[0.0, 0.0])
    g = grad_one(p, 0, 0, 1)
    np.testing.assert_allclose(g[("entity", 0)], [-0.6, -0.8])
    np.testing.assert_allclose(g[("entity", 1)], [0.6, 0.8])


def test_translation_zero_norm_gradient_is_zero():
    p = make("TransE", dim=2)
    set_rows(p, entity_0=[1.0, 1.0], relation_0=[0.0, 0.0], entity_1=[1.0, 1.0])
    for g in grad_one(p, 0, 0, 1).values():
        assert np.all(g == 0) and np.all(np.isfinite(g))


def test_rotate_phase_gradient_at_zero_phase():
    p = make("RotatE", dim=4, seed=9)
    p.tables["relation"][:] = 0.0
    p.tables["entity"][:, 1::2] = 0.0  # real embeddings
    # with real s, o and theta = 0 the rotation only moves s off the real axis,
    # orthogonally to the residual s - o, so the phase gradient vanishes
    g = grad_one(p, 0, 0, 1)[("relation", 0)]
    np.testing.assert_allclose(g, np.zeros(2), atol=1e-15)
    check_grad_one(p, 0, 0, 1)
    p.tables["relation"][0] = [0.3, -1.2]
    check_grad_one(p, 0, 0, 1)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("reciprocal", [False, True])
@pytest.mark.parametrize("variant", ["printed", "original"])
def test_backward_candidates_matches_finite_differences(kind, reciprocal, variant):
    p = make(kind, n_ent=6, n_rel=2, dim=4, reciprocal=reciprocal, seed=11, simple_variant=variant)
    rng = np.random.default_rng(12)
    anchor = np.array([0, 3, 3])
    rel = rng.integers(p.relation_rows, size=3)
    for side in (TAIL, HEAD):
        for candidates, chunk in [(None, None), (None, 2), (np.array([1, 1, 4, 5]), None), (np.array([0, 2, 5]), 2)]:
            n_cand = p.n_entities if candidates is None else len(candidates)
            dS = rng.standard_normal((3, n_cand))
            grads = p.zeros()
            backward_candidates(p, anchor, rel, side, dS, grads, candidates=candidates, chunk=chunk)

            def objective():
                return float(np.sum(dS * score_candidates(p, anchor, rel, side, candidates=candidates)))

            for table in p.tables:
                for row in range(p.tables[table].shape[0]):
                    num = finite_difference(objective, p, table, row)
                    assert rel_error(grads[table][row], num) < 1e-4, (kind, side, table, row)
