import math

import numpy as np
import pytest

from lib.bench.generator import generate_group
from lib.bench.profiles import DatasetProfile
from lib.core.errors import ConfigError, DomainError, UnknownFeatureError
from lib.core.model import FeatureKind
from lib.storage.flatmap import Column, InMemoryRowGroup
from lib.transforms import operators as ops
from lib.transforms.executor import ExecutionStats, GraphExecutor, batches_to_samples, execute_graph
from lib.transforms.graph import TransformGraph, chain_example, identity_graph, node_from, parse_node
from lib.transforms.kernels import OPERATORS, KernelContext, run_kernel

N = 1200


# -- column builders -----------------------------------------------------------

def dense_col(rng, x, coverage=0.8):
    x = np.asarray(x, dtype=np.float64)
    presence = rng.random(len(x)) < coverage
    return Column(FeatureKind.DENSE, presence, np.where(presence, x, 0.0).reshape(-1, 1))


def sparse_col(rng, rows, lo, hi, max_len=6, coverage=0.8, scored=False):
    presence = rng.random(rows) < coverage
    lengths = np.where(presence, rng.integers(0, max_len + 1, size=rows), 0)
    offsets = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    values = rng.integers(lo, hi, size=int(offsets[-1]), dtype=np.int64)
    if not scored:
        return Column(FeatureKind.SPARSE, presence, values, offsets)
    scores = rng.random(len(values)).astype(np.float32) * 10
    return Column(FeatureKind.SCORED, presence, values, offsets, scores)


def id_rows(col):
    return [col.values[col.offsets[r]:col.offsets[r + 1]].tolist() for r in range(col.rows)]


def score_rows(col):
    return [col.scores[col.offsets[r]:col.offsets[r + 1]].tolist() for r in range(col.rows)]


def run(name, inputs, params, rows=N, row_ids=None):
    ctx = KernelContext.for_rows(np.arange(rows, dtype=np.int64) if row_ids is None else row_ids)
    return run_kernel(OPERATORS[name], inputs, params, ctx), ctx


def present_rows(col):
    return np.flatnonzero(col.presence).tolist()


# -- kernels against scalar oracles ------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_bucketize(seed):
    rng = np.random.default_rng(seed)
    borders = np.unique(rng.normal(0, 10, size=int(rng.integers(1, 20))))
    x = rng.normal(0, 15, size=N)
    x[:100] = rng.choice(borders, size=100)
    col = dense_col(rng, x)
    out, _ = run("bucketize", [col], {"borders": tuple(borders.tolist())})
    assert out.presence.tolist() == col.presence.tolist()
    for r in present_rows(col):
        assert out.values[r, 0] == ops.bucketize(x[r], borders.tolist())


@pytest.mark.parametrize("seed", range(3))
def test_logit(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.2, 1.2, size=N)
    eps = float(rng.uniform(1e-9, 0.1))
    col = dense_col(rng, x)
    out, _ = run("logit", [col], {"eps": eps})
    rows = present_rows(col)
    np.testing.assert_allclose(out.values[rows, 0], [ops.logit(x[r], eps) for r in rows],
                               rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("lam", [0.0, 1e-9, -1.5, 0.5, 2.0])
def test_box_cox(lam):
    rng = np.random.default_rng(int(abs(lam) * 10))
    x = np.exp(rng.uniform(-5, 5, size=N))
    col = dense_col(rng, x)
    out, ctx = run("box_cox", [col], {"lambda": lam})
    assert not ctx.reject.any()
    rows = present_rows(col)
    np.testing.assert_allclose(out.values[rows, 0], [ops.box_cox(x[r], lam) for r in rows],
                               rtol=1e-12, atol=1e-15)


def test_box_cox_flags_nonpositive_rows():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=N)
    col = dense_col(rng, x)
    out, ctx = run("box_cox", [col], {"lambda": 0.5})
    bad = col.presence & (x <= 0)
    assert ctx.reject.tolist() == bad.tolist()
    assert not (out.presence & bad).any()
    for r in np.flatnonzero(bad)[:20]:
        with pytest.raises(DomainError):
            ops.box_cox(x[r], 0.5)


@pytest.mark.parametrize("card", [1, 3, 8])
def test_onehot(card):
    rng = np.random.default_rng(card)
    x = rng.uniform(-2, card + 2, size=N)
    col = dense_col(rng, x)
    out, ctx = run("onehot", [col], {"cardinality": card})
    assert out.width == card
    for r in present_rows(col):
        np.testing.assert_array_equal(out.values[r], ops.onehot(math.floor(x[r]), card))
    outside = col.presence & ((np.floor(x) < 0) | (np.floor(x) >= card))
    assert ctx.counters.get("onehot_out_of_range", 0) == int(outside.sum())


def test_clamp_dense_and_ids():
    rng = np.random.default_rng(4)
    x = rng.normal(0, 5, size=N)
    col = dense_col(rng, x)
    out, _ = run("clamp", [col], {"lo": -2.5, "hi": 3.0})
    for r in present_rows(col):
        assert out.values[r, 0] == ops.clamp(x[r], -2.5, 3.0)
    ids = sparse_col(rng, N, -20, 20)
    out, _ = run("clamp", [ids], {"lo": -5.5, "hi": 7.2})
    assert id_rows(out) == [[ops.clamp(v, -5, 7) for v in row] for row in id_rows(ids)]


def test_get_local_hour():
    rng = np.random.default_rng(5)
    ts = rng.uniform(-2e9, 2e9, size=N)
    offset = int(rng.integers(-50_000, 50_000))
    col = dense_col(rng, ts)
    out, _ = run("get_local_hour", [col], {"offset": offset})
    for r in present_rows(col):
        assert out.values[r, 0] == ops.get_local_hour(ts[r], offset)


@pytest.mark.parametrize("max_value", [1, 7, 1 << 20, (1 << 63) - 25, 1 << 63])
def test_sigrid_hash(max_value):
    rng = np.random.default_rng(6)
    col = sparse_col(rng, N, -(1 << 63), (1 << 63) - 1)
    out, _ = run("sigrid_hash", [col], {"max": max_value})
    assert id_rows(out) == [ops.sigrid_hash(row, max_value) for row in id_rows(col)]
    assert out.presence.tolist() == col.presence.tolist()


def test_sigrid_hash_keeps_scores():
    rng = np.random.default_rng(7)
    col = sparse_col(rng, N, 0, 1 << 40, scored=True)
    out, _ = run("sigrid_hash", [col], {"max": 1000})
    assert out.kind == FeatureKind.SCORED
    np.testing.assert_array_equal(out.scores, col.scores)


@pytest.mark.parametrize("x", [0, 1, 3, 8])
def test_first_x(x):
    rng = np.random.default_rng(x)
    col = sparse_col(rng, N, -(1 << 40), 1 << 40, scored=True)
    out, _ = run("first_x", [col], {"x": x})
    assert id_rows(out) == [ops.first_x(row, x) for row in id_rows(col)]
    assert score_rows(out) == [ops.first_x(row, x) for row in score_rows(col)]


@pytest.mark.parametrize("m", [1, 2, 97, 1 << 40])
def test_positive_modulus(m):
    rng = np.random.default_rng(m % 1000)
    col = sparse_col(rng, N, -(1 << 62), 1 << 62)
    out, _ = run("positive_modulus", [col], {"m": m})
    assert id_rows(out) == [[ops.positive_modulus(v, m) for v in row] for row in id_rows(col)]


def test_enumerate():
    rng = np.random.default_rng(8)
    col = sparse_col(rng, N, -1000, 1000)
    out, _ = run("enumerate", [col], {})
    assert out.kind == FeatureKind.SCORED
    for ids, got_ids, got_pos in zip(id_rows(col), id_rows(out), score_rows(out)):
        assert list(zip([int(p) for p in got_pos], got_ids)) == ops.enumerate_ids(ids)


def test_id_list_intersect():
    rng = np.random.default_rng(9)
    a = sparse_col(rng, N, 0, 10, max_len=8)
    b = sparse_col(rng, N, 0, 10, max_len=8)
    out, _ = run("id_list_intersect", [a, b], {})
    assert id_rows(out) == [ops.id_list_intersect(x, y) for x, y in zip(id_rows(a), id_rows(b))]
    assert out.presence.tolist() == (a.presence | b.presence).tolist()


@pytest.mark.parametrize("table", [{}, {-3: 30, 0: 1, 4: 44, 9: -9}])
def test_map_id(table):
    rng = np.random.default_rng(10)
    col = sparse_col(rng, N, -15, 15)
    out, _ = run("map_id", [col], {"table": table, "default": -1})
    assert id_rows(out) == [[ops.map_id(v, table, -1) for v in row] for row in id_rows(col)]


def _id_list(col, r):
    if col.kind == FeatureKind.DENSE:
        return [math.floor(col.values[r, 0])] if col.presence[r] else []
    return col.values[col.offsets[r]:col.offsets[r + 1]].tolist()


@pytest.mark.parametrize("n,inputs", [(1, 1), (2, 1), (2, 2), (3, 3), (4, 2)])
def test_ngram(n, inputs):
    rng = np.random.default_rng(n * 10 + inputs)
    cols = [sparse_col(rng, N, -(1 << 40), 1 << 40) for _ in range(inputs - 1)]
    cols.append(dense_col(rng, rng.uniform(-50, 50, size=N)) if inputs > 1 else
                sparse_col(rng, N, -(1 << 40), 1 << 40))
    out, _ = run("ngram", cols, {"n": n})
    for r in range(N):
        ids = [v for c in cols for v in _id_list(c, r)]
        assert out.values[out.offsets[r]:out.offsets[r + 1]].tolist() == ops.ngram(ids, n)


def test_cartesian():
    rng = np.random.default_rng(11)
    a = sparse_col(rng, N, -(1 << 40), 1 << 40, max_len=4)
    b = dense_col(rng, rng.uniform(0, 100, size=N))
    out, _ = run("cartesian", [a, b], {})
    for r in range(N):
        expected = ops.cartesian(_id_list(a, r), _id_list(b, r))
        assert out.values[out.offsets[r]:out.offsets[r + 1]].tolist() == expected
    assert out.presence.tolist() == (a.presence | b.presence).tolist()


@pytest.mark.parametrize("op_text", ["sum", "max", "scale:0.5"])
def test_compute_score(op_text):
    rng = np.random.default_rng(12)
    col = sparse_col(rng, N, 0, 1 << 20, scored=True)
    op = ops.ScoreOp.parse(op_text)
    out, _ = run("compute_score", [col], {"op": op})
    pairs = [list(zip(i, s)) for i, s in zip(id_rows(col), score_rows(col))]
    if op.kind == "scale":
        assert out.kind == FeatureKind.SCORED
        for got_ids, got_scores, row in zip(id_rows(out), score_rows(out), pairs):
            assert list(zip(got_ids, got_scores)) == ops.compute_score(row, op)
        return
    for r in present_rows(col):
        assert out.values[r, 0] == ops.compute_score(pairs[r], op)


@pytest.mark.parametrize("rate", [0.0, 0.1, 0.5, 1.0])
def test_sampling(rate):
    rng = np.random.default_rng(13)
    row_ids = rng.integers(-(1 << 50), 1 << 50, size=N, dtype=np.int64)
    seed = 1234
    _, ctx = run("sampling", [], {"rate": rate, "seed": seed}, row_ids=row_ids)
    assert ctx.keep.tolist() == [ops.sampling(rate, seed, int(r)) for r in row_ids]


def test_kernel_rejects_wrong_input_kind():
    rng = np.random.default_rng(0)
    with pytest.raises(DomainError):
        run("sigrid_hash", [dense_col(rng, np.ones(N))], {"max": 10})
    with pytest.raises(DomainError):
        run("compute_score", [sparse_col(rng, N, 0, 10)], {"op": ops.ScoreOp()})


def test_scalar_domain_errors():
    with pytest.raises(DomainError):
        ops.sigrid_hash([1], 0)
    with pytest.raises(DomainError):
        ops.box_cox(0.0, 1.0)
    with pytest.raises(DomainError):
        ops.positive_modulus(3, 0)
    with pytest.raises(DomainError):
        ops.ngram([1, 2], 0)
    with pytest.raises(ValueError):
        ops.ScoreOp.parse("median")


# -- worked examples with hand-computed results ------------------------------------

def _dense_kernel(name, xs, params):
    col = Column(FeatureKind.DENSE, np.ones(len(xs), dtype=bool),
                 np.asarray(xs, dtype=np.float64).reshape(-1, 1))
    out, _ = run(name, [col], params, rows=len(xs))
    return out.values[:, 0].tolist()


@pytest.mark.parametrize("x, want", [(-1.0, 0), (9.99, 0), (10.0, 1), (50.0, 1), (100.0, 2), (1e6, 2)])
def test_bucketize_worked_examples(x, want):
    assert ops.bucketize(x, [10.0, 100.0]) == want
    assert _dense_kernel("bucketize", [x], {"borders": (10.0, 100.0)}) == [want]


@pytest.mark.parametrize("x, m, want", [(-3, 5, 2), (7, 5, 2), (-5, 5, 0), (-1, 7, 6), (0, 1, 0)])
def test_positive_modulus_worked_examples(x, m, want):
    assert ops.positive_modulus(x, m) == want
    ids = Column(FeatureKind.SPARSE, np.ones(1, dtype=bool), np.array([x], dtype=np.int64),
                 np.array([0, 1], dtype=np.int64))
    out, _ = run("positive_modulus", [ids], {"m": m}, rows=1)
    assert out.values.tolist() == [want]


@pytest.mark.parametrize("ts, offset, want", [
    (0.0, -3600, 23),
    (7200.0, -7201, 23),
    (3599.9, 0, 0),
    (-0.5, 0, 23),
    (3 * 86400 + 5 * 3600 + 10, 3600, 6),
])
def test_get_local_hour_worked_examples(ts, offset, want):
    assert ops.get_local_hour(ts, offset) == want
    assert _dense_kernel("get_local_hour", [ts], {"offset": offset}) == [want]


@pytest.mark.parametrize("x, lam, want", [
    (2.0, 1e-8, math.log(2.0)),
    (2.0, 0.0, math.log(2.0)),
    (2.0, 1.0, 1.0),
    (4.0, 0.5, 2.0),
    (math.e, 0.0, 1.0),
])
def test_box_cox_worked_examples(x, lam, want):
    assert ops.box_cox(x, lam) == pytest.approx(want, rel=1e-7)
    assert _dense_kernel("box_cox", [x], {"lambda": lam}) == [pytest.approx(want, rel=1e-7)]


@pytest.mark.parametrize("p, eps, want", [
    (0.5, 1e-6, 0.0),
    (0.0, 1e-6, math.log(1e-6 / (1 - 1e-6))),
    (1.0, 1e-6, math.log((1 - 1e-6) / 1e-6)),
    (-3.0, 0.01, math.log(0.01 / 0.99)),
    (0.75, 0.01, math.log(3.0)),
])
def test_logit_clamps_at_eps(p, eps, want):
    assert ops.logit(p, eps) == pytest.approx(want, rel=1e-9, abs=1e-12)
    assert _dense_kernel("logit", [p], {"eps": eps}) == [pytest.approx(want, rel=1e-9, abs=1e-12)]


@pytest.mark.parametrize("rate", [0.1, 0.5, 0.9])
def test_sampling_keeps_rate_over_a_million_rows(rate):
    rows = 1_000_000
    _, ctx = run("sampling", [], {"rate": rate, "seed": 7}, rows=rows)
    assert ctx.keep.mean() == pytest.approx(rate, abs=0.003)


# -- parameter grammar and manifests -------------------------------------------

def test_parameter_validation():
    with pytest.raises(ValueError):
        OPERATORS["bucketize"].parse_params({"borders": "3,1"})
    with pytest.raises(ValueError):
        OPERATORS["sampling"].parse_params({"rate": "2"})
    with pytest.raises(ValueError):
        OPERATORS["first_x"].parse_params({})
    with pytest.raises(ValueError):
        OPERATORS["first_x"].parse_params({"x": "2", "y": "1"})
    assert OPERATORS["map_id"].parse_params({"table": "1:2,3:4"}) == {"table": {1: 2, 3: 4}, "default": 0}


def test_manifest_round_trip(tmp_path):
    graph = chain_example(1, 4, borders=(0.5, 2.25, 1e6))
    graph = TransformGraph(list(graph) + [
        node_from(77, "map_id", [4], table="5:6,-1:2", default=9),
        node_from(78, "compute_score", [7], op="scale:0.25"),
        node_from(79, "sampling", [], rate=0.75, seed=3),
    ])
    text = "# job graph\n" + graph.to_manifest() + "\n"
    back = TransformGraph.from_manifest(text)
    assert back == graph
    assert back.node(77).params["table"] == {5: 6, -1: 2}
    path = tmp_path / "job.graph"
    path.write_text(text)
    assert TransformGraph.load(path) == graph
    assert graph.external_inputs() == [1, 4, 7]


@pytest.mark.parametrize("text", [
    "1 nope inputs=2",
    "x bucketize borders=1 inputs=2",
    "5 first_x inputs=2",
    "5 first_x x=1 inputs",
    "5",
])
def test_manifest_parse_errors(text):
    with pytest.raises(ConfigError):
        TransformGraph.from_manifest(text)


def test_graph_construction_errors(tmp_path):
    with pytest.raises(ConfigError):
        TransformGraph([parse_node("5 first_x x=1 inputs=2"), parse_node("5 first_x x=2 inputs=3")])
    with pytest.raises(ConfigError):
        TransformGraph.load(tmp_path / "missing.graph")


def test_output_kinds_follow_operators():
    graph = chain_example(1, 4)
    kinds = graph.output_kinds({1: FeatureKind.DENSE, 4: FeatureKind.SPARSE})
    assert list(kinds.values()) == [FeatureKind.DENSE, FeatureKind.SPARSE,
                                    FeatureKind.SPARSE, FeatureKind.SPARSE]


# -- executor --------------------------------------------------------------------

EXEC_PROFILE = DatasetProfile("exec", dense=3, sparse=2, scored=1, coverage=0.7, sparse_length=3.0,
                              projection_dense=1, projection_sparse=1, id_space=1 << 30)


def _group(rows, seed=0):
    return generate_group(EXEC_PROFILE, rows, seed)


def test_batches_never_cross_boundaries():
    group = _group(10_001)
    stats = ExecutionStats()
    batches = list(execute_graph(identity_graph(), group, 1000, stats=stats))
    assert [b.row_count for b in batches] == [1000] * 10 + [1]
    assert [b.batch_id for b in batches] == list(range(11))
    assert np.concatenate([b.row_ids for b in batches]).tolist() == list(range(10_001))
    assert stats.rows_in == stats.rows_out == 10_001 and stats.batches == 11
    assert all(b.problems() == [] for b in batches)


def test_chain_matches_scalar_composition():
    group = _group(3000, seed=2)
    graph = chain_example(1, 4, borders=(1.0, 2.0, 4.0), x=3, n=2, max_value=1 << 20)
    hashed = graph.outputs[-1]
    batches = list(execute_graph(graph, group, 256))
    dense, ids = group.columns[1], group.columns[4]
    r = 0
    for batch in batches:
        for i in range(batch.row_count):
            chain = []
            if dense.presence[r]:
                chain.append(ops.bucketize(dense.values[r, 0], [1.0, 2.0, 4.0]))
            chain += ops.first_x(ids.values[ids.offsets[r]:ids.offsets[r + 1]].tolist(), 3)
            expected = ops.sigrid_hash(ops.ngram(chain, 2), 1 << 20)
            assert list(batch.sparse_row(hashed, i)) == expected
            r += 1
    assert r == 3000


def test_sampling_drops_rows_and_empty_batches():
    group = _group(2000, seed=3)
    graph = TransformGraph([node_from(900, "sampling", [], rate=0.3, seed=7)])
    stats = ExecutionStats()
    batches = list(execute_graph(graph, group, 100, stats=stats))
    kept = [r for r in range(2000) if ops.sampling(0.3, 7, r)]
    assert np.concatenate([b.row_ids for b in batches]).tolist() == kept
    assert stats.rows_sampled_out == 2000 - len(kept)
    assert stats.counters["sampled_out"] == 2000 - len(kept)

    none = TransformGraph([node_from(900, "sampling", [], rate=0.0)])
    stats = ExecutionStats()
    assert list(execute_graph(none, group, 100, stats=stats)) == []
    assert stats.batches == 0 and stats.rows_out == 0


def test_domain_errors_reject_rows():
    group = _group(500, seed=4)
    col = group.columns[2]
    col.values[:, 0] -= 3.0  # gamma(2, 1) values, some now nonpositive
    graph = TransformGraph([node_from(901, "box_cox", [2], **{"lambda": 0.5})])
    stats = ExecutionStats()
    batches = list(execute_graph(graph, group, 128, stats=stats))
    bad = col.presence & (col.values[:, 0] <= 0)
    assert stats.rows_rejected == int(bad.sum())
    survivors = np.concatenate([b.row_ids for b in batches])
    assert survivors.tolist() == np.flatnonzero(~bad).tolist()


def test_executor_errors():
    cyclic = TransformGraph([node_from(10, "first_x", [11], x=1), node_from(11, "first_x", [10], x=1)])
    with pytest.raises(ValueError):
        GraphExecutor(cyclic)
    executor = GraphExecutor(TransformGraph([node_from(10, "first_x", [999], x=1)]))
    with pytest.raises(UnknownFeatureError):
        list(executor.batches(_group(10), 5))
    with pytest.raises(ValueError):
        list(GraphExecutor(identity_graph()).batches(_group(10), 0))


def test_class_shares_sum_to_one():
    stats = ExecutionStats()
    list(execute_graph(chain_example(1, 4), _group(2000), 500, stats=stats))
    shares = stats.class_shares()
    assert set(shares) == {"feature_gen", "sparse_norm"}
    assert sum(shares.values()) == pytest.approx(1.0)
    assert ExecutionStats().class_shares() == {}


def test_samples_in_batches_out(schema, samples):
    kinds = schema.kinds()
    batches = list(execute_graph(identity_graph(), samples, 64, kinds=kinds))
    back = batches_to_samples(batches, kinds)
    assert [s.row_id for s in back] == [s.row_id for s in samples]
    sparse_ids = [f for f, k in kinds.items() if k == FeatureKind.SPARSE]
    for got, want in zip(back, samples):
        # batches carry no presence for id lists: absent comes back empty
        assert {f: got.sparse[f] for f in sparse_ids} == {f: want.sparse.get(f, []) for f in sparse_ids}
        assert got.label == want.label


def test_empty_group_yields_nothing():
    group = InMemoryRowGroup.empty({1: FeatureKind.DENSE})
    assert list(execute_graph(identity_graph(), group, 10)) == []
