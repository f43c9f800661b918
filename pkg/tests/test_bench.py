from dataclasses import replace

import numpy as np
import pytest

from lib.bench.generator import (
    catalog_profile,
    catalog_weights,
    gen_dataset,
    generate_group,
    order_policy,
    rm1_graph,
    sample_session,
)
from lib.bench.ladder import REFERENCE_STORAGE, REFERENCE_WORKER, LadderConfig, LadderReport, run_ladder
from lib.bench.profiles import (
    DatasetProfile,
    expected_popular_bytes,
    fit_length_skew,
    inclusion_probabilities,
    preset,
    sample_projection,
    sparse_lengths,
    zipf_weights,
)
from lib.bench.report import emit_report, ladder_chart_png, render_ladder_chart, render_markdown, render_tsv
from lib.core.errors import ConfigError
from lib.core.model import FeatureKind
from lib.storage.catalog import TableCatalog
from lib.storage.reader import ColumnarFile
from lib.transforms.executor import REFERENCE_CLASS_SHARES, ExecutionStats, GraphExecutor, describe_class_shares
from lib.transforms.kernels import DENSE_NORM, FEATURE_GEN, SPARSE_NORM

WIDE = DatasetProfile("wide", dense=6, sparse=4, coverage=0.45, sparse_length=4.0,
                      projection_dense=3, projection_sparse=2)


def test_generator_is_deterministic():
    a = generate_group(WIDE, 500, seed=3)
    b = generate_group(WIDE, 500, seed=3)
    c = generate_group(WIDE, 500, seed=3, stream=1)
    np.testing.assert_array_equal(a.labels, b.labels)
    for fid in a.columns:
        np.testing.assert_array_equal(a.columns[fid].values, b.columns[fid].values)
    assert not np.array_equal(a.columns[1].presence, c.columns[1].presence)


def test_generator_matches_profile_statistics():
    group = generate_group(WIDE, 20_000, seed=1, row_base=100)
    np.testing.assert_array_equal(group.row_ids[:3], [100, 101, 102])
    presence = np.concatenate([col.presence for col in group.columns.values()])
    assert presence.mean() == pytest.approx(0.45, abs=0.01)
    for col in group.columns.values():
        assert col.presence.mean() == pytest.approx(0.45, abs=0.02)
        if col.kind == FeatureKind.SPARSE:
            lengths = np.diff(col.offsets)[col.presence]
            assert lengths.min() >= 1
            assert lengths.mean() == pytest.approx(4.0, rel=0.05)
        else:
            assert (col.values[~col.presence] == 0).all()
    assert group.labels.mean() == pytest.approx(0.1, abs=0.01)


def test_profiles_and_presets():
    rm1 = preset("rm1")
    assert (rm1.dense, rm1.sparse, rm1.projection_dense) == (12115, 1763, 1221)
    small = preset("RM2", scale=0.01, rows=1000)
    assert small.dense == 126 and small.projection_dense == 11
    assert small.rows_per_partition == 1000
    with pytest.raises(ConfigError):
        preset("rm9")
    with pytest.raises(ConfigError):
        rm1.scaled(0)
    with pytest.raises(ConfigError):
        DatasetProfile(coverage=0.0)
    with pytest.raises(ConfigError):
        DatasetProfile(dense=2, projection_dense=3)
    assert DatasetProfile.from_dict(WIDE.to_dict()) == WIDE


def test_zipf_weights_and_projection_sampling():
    weights = zipf_weights(WIDE, seed=4)
    assert weights == zipf_weights(WIDE, seed=4)
    assert sorted(weights.values(), reverse=True) == pytest.approx(
        [r ** -WIDE.zipf_s for r in range(1, 11)])
    rng = np.random.default_rng(0)
    kinds = WIDE.schema().kinds()
    for _ in range(50):
        proj = sample_projection(WIDE, weights, rng)
        assert sum(kinds[f] == FeatureKind.DENSE for f in proj) == 3
        assert sum(kinds[f] != FeatureKind.DENSE for f in proj) == 2


def test_sparse_lengths_fit_the_popular_bytes_share():
    profile = preset("rm1", scale=0.01)
    weights = zipf_weights(profile, 0)
    assert profile.zipf_s == 1.2
    skew = fit_length_skew(profile, weights)
    assert 0.0 < skew < 4.0
    assert expected_popular_bytes(profile, weights, skew=0.0) < profile.popular_bytes
    assert expected_popular_bytes(profile, weights) == pytest.approx(0.39, abs=0.03)

    lengths = sparse_lengths(profile, weights)
    assert len(lengths) == profile.sparse + profile.scored
    assert np.mean(list(lengths.values())) == pytest.approx(profile.sparse_length)
    assert min(lengths.values()) >= 1.0
    assert max(lengths, key=lengths.get) == max(lengths, key=weights.get)
    schema = profile.schema(weights=weights)
    assert {f.id: f.mean_length for f in schema.features if f.kind != FeatureKind.DENSE} == lengths
    assert all(f.mean_length == 0.0 for f in schema.features if f.kind == FeatureKind.DENSE)

    flat = replace(profile, length_skew=0.0)
    assert all(v == pytest.approx(profile.sparse_length) for v in sparse_lengths(flat, weights).values())


def test_inclusion_probabilities():
    w = np.array([8.0, 4.0, 2.0, 1.0, 0.0])
    pi = inclusion_probabilities(w, 2)
    assert pi.sum() == pytest.approx(2.0)
    assert list(pi) == sorted(pi, reverse=True)
    assert pi[-1] == 0.0
    assert inclusion_probabilities(w, 4).tolist() == [1.0, 1.0, 1.0, 1.0, 0.0]
    assert inclusion_probabilities(w, 0).tolist() == [0.0] * 5


def test_order_policy_names():
    with pytest.raises(ConfigError):
        order_policy("alphabetical", 0)
    with pytest.raises(ConfigError):
        order_policy("popularity", 0)


def test_gen_dataset_writes_a_loadable_table(tiny_table, tiny_profile, tmp_path):
    loaded = TableCatalog.load(tmp_path / "table")
    assert loaded.row_count == tiny_table.row_count == 4000
    assert loaded.partitions == ["p0", "p1"]
    assert [f.row_base for f in loaded.files] == [0, 1000, 2000, 3000]
    assert catalog_profile(loaded) == tiny_profile
    assert catalog_weights(loaded) == zipf_weights(tiny_profile, 5)
    for entry in loaded.files:
        with ColumnarFile(loaded.resolve(entry)) as f:
            assert f.row_count == entry.row_count
            assert [s.row_count for s in f.footer.stripes] == list(entry.stripe_rows)
    spec = sample_session(loaded, seed=1, batch_size=64, split_size=256)
    assert spec.partitions == ("p0", "p1")
    assert len(spec.projection) == tiny_profile.projection_dense + tiny_profile.projection_sparse


def test_rm1_graph_class_shares_track_the_production_mix():
    profile = preset("rm1", scale=0.01, rows=2048)
    schema = profile.schema()
    kinds = schema.kinds()
    group = generate_group(profile, 2048, seed=2, schema=schema)
    rng = np.random.default_rng(2)
    stats = ExecutionStats()
    for _ in range(2):
        projection = sample_projection(profile, zipf_weights(profile, 2), rng)
        graph = rm1_graph(projection, kinds)
        assert {node.operator.op_class for node in graph} == {DENSE_NORM, SPARSE_NORM, FEATURE_GEN}
        assert graph.topological_order()[1] == []
        sub = group.project(projection)
        batches = list(GraphExecutor(graph).batches(sub, 256, stats=stats))
        assert sum(b.row_count for b in batches) == 2048
    shares = stats.class_shares()
    assert set(shares) == set(REFERENCE_CLASS_SHARES)
    assert sum(shares.values()) == pytest.approx(1.0)
    assert max(shares, key=shares.get) == FEATURE_GEN
    for name, reference in REFERENCE_CLASS_SHARES.items():
        assert shares[name] == pytest.approx(reference, abs=0.25)
    assert "feature_gen" in describe_class_shares(shares)
    assert "(reference 75%)" in describe_class_shares(shares)


def _report(storage=REFERENCE_STORAGE, worker=REFERENCE_WORKER):
    return LadderReport(worker=[v * 10 for v in worker], storage=[v * 1000 for v in storage],
                        rows=8192, features=139, projection_size=15.0, storage_overhead=0.02,
                        bytes_for_80pct_traffic=0.4, io_sizes={"mean": 50_000.0, "p50": 40_000.0})


def test_report_normalizes_to_baseline():
    report = _report()
    assert report.value("worker", "+FM") == pytest.approx(2.3)
    assert report.value("storage", "+LS") == pytest.approx(2.41)
    assert report.problems() == []
    flat = _report(storage=[1.0] * 7)
    assert len(flat.problems()) == 3


def test_report_renderers(tmp_path):
    report = _report()
    tsv = render_tsv(report)
    assert tsv.splitlines()[0] == "row\tBaseline\t+FF\t+FM\t+LO\t+CR\t+FR\t+LS"
    assert tsv.splitlines()[1].startswith("worker (measured)\t1.00\t2.00")
    md = render_markdown(report)
    assert "All directionality checks hold." in md
    assert "### Directionality problems" in render_markdown(_report(storage=[1.0] * 7))
    assert emit_report(report, tmp_path / "out" / "ladder.md", fmt="md").read_text() == md
    with pytest.raises(ValueError):
        emit_report(report, tmp_path / "ladder.csv", fmt="csv")
    assert ladder_chart_png(report).startswith(b"\x89PNG")
    assert render_ladder_chart(report, tmp_path / "chart.png").stat().st_size > 0


@pytest.mark.slow
def test_ladder_directionality(tmp_path):
    profile = preset("rm1", scale=0.01, rows=100_000)
    report = run_ladder(profile, tmp_path, LadderConfig(projections=10, repeats=1))
    assert report.problems() == []
    assert report.rows == 100_000
    assert report.value("storage", "+FF") < 0.10
    assert report.value("storage", "+CR") >= 0.8
    assert report.value("storage", "+FR") > report.value("storage", "+CR")
    assert report.value("storage", "+LS") > report.value("storage", "+FR")
    assert report.value("worker", "+FF") > 1.0
    assert set(report.class_shares) == set(REFERENCE_CLASS_SHARES)
    assert 0 < report.storage_overhead < 0.5
    assert report.bytes_for_80pct_traffic == pytest.approx(0.39, abs=0.1)
