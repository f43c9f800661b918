import io

import numpy as np
import pytest

from lib.core.errors import (
    ChecksumError,
    FormatError,
    MissingPartitionError,
    SchemaViolation,
    SinkWriteError,
    UnknownFeatureError,
)
from lib.core.model import FeatureKind, FeatureProjection, Sample
from lib.storage import encoding
from lib.storage.catalog import TableCatalog, partition_rows
from lib.storage.flatmap import InMemoryRowGroup
from lib.storage.format import HEADER, LABEL_FEATURE, MAGIC, Codec, StreamKind
from lib.storage.planner import plan_whole_stripes
from lib.storage.reader import ColumnarFile, read_rows, read_rows_rowmajor
from lib.storage.writer import OrderPolicy, TableWriter, WriterConfig, layout_order, write_table
from tests.conftest import make_samples, make_schema


def _write(samples, schema, **cfg):
    sink = io.BytesIO()
    footer = write_table(samples, schema, WriterConfig(**cfg), sink)
    return sink.getvalue(), footer


# -- encodings ---------------------------------------------------------------

def test_varint_reference_bytes():
    assert encoding.encode_uvarints(np.array([0, 1, 127, 128, 300])) == bytes(
        [0x00, 0x01, 0x7F, 0x80, 0x01, 0xAC, 0x02])
    assert encoding.encode_ids(np.array([0, -1, 1, -2])) == bytes([0, 1, 2, 3])


def test_varint_extremes_and_errors():
    values = np.array([0, 2**63 - 1, -(2**63), -1, 1 << 35], dtype=np.int64)
    data = encoding.encode_ids(values)
    np.testing.assert_array_equal(encoding.decode_ids(data, len(values)), values)
    with pytest.raises(FormatError):
        encoding.decode_uvarints(data[:-1], len(values))
    with pytest.raises(FormatError):
        encoding.decode_uvarints(b"\x01", 0)


def test_bitmap_is_lsb_first():
    assert encoding.encode_bitmap(np.array([1, 0, 0, 0, 0, 0, 0, 0, 1], dtype=bool)) == b"\x01\x01"
    with pytest.raises(FormatError):
        encoding.decode_bitmap(b"\x01", 9)


def test_deflate_codec_round_trip():
    raw = bytes(range(256)) * 10
    packed = encoding.compress(raw, Codec.DEFLATE)
    assert len(packed) < len(raw)
    assert encoding.decompress(packed, Codec.DEFLATE, len(raw)) == raw
    with pytest.raises(FormatError):
        encoding.decompress(packed, Codec.DEFLATE, len(raw) + 1)


# -- writer / reader -----------------------------------------------------------

def test_file_starts_and_ends_with_magic(schema, samples):
    data, footer = _write(samples, schema, stripe_rows=128)
    assert data[:4] == MAGIC and data[-4:] == MAGIC
    assert [s.row_count for s in footer.stripes] == [128, 128, 44]


@pytest.mark.parametrize("codec", [Codec.IDENTITY, Codec.DEFLATE])
def test_full_projection_round_trip(schema, samples, codec):
    data, _ = _write(samples, schema, stripe_rows=64, codec=codec)
    f = ColumnarFile(data)
    stripes = range(f.stripe_count)
    got = list(read_rows(f, stripes, FeatureProjection(tuple(schema.ids())), f.plan(schema.ids(), stripes)))
    assert got == samples


def test_projection_equals_filter_oracle(schema, samples):
    data, _ = _write(samples, schema, stripe_rows=50, order=OrderPolicy.random(3))
    f = ColumnarFile(data)
    rng = np.random.default_rng(0)
    stripes = range(f.stripe_count)
    for _ in range(25):
        k = int(rng.integers(1, len(schema.ids()) + 1))
        proj = FeatureProjection(tuple(int(v) for v in rng.choice(schema.ids(), size=k, replace=False)))
        got = list(read_rows(f, stripes, proj, f.plan(proj, stripes, window=int(rng.integers(1, 5000)))))
        assert got == [s.project(proj) for s in samples]


def test_rowmajor_path_reads_everything(schema, samples):
    data, _ = _write(samples, schema, stripe_rows=100)
    f = ColumnarFile(data)
    plan = plan_whole_stripes(f.footer, f.stripe_footers, [1])
    assert read_rows_rowmajor(f, [1], plan) == samples[100:200]


def test_row_range_and_row_base(schema, samples):
    data, _ = _write(samples, schema, stripe_rows=64)
    f = ColumnarFile(data)
    stripes = list(f.stripes_for_rows(70, 200))
    assert stripes == [1, 2, 3]
    group = f.read_row_group(stripes, [1, 4], f.plan([1, 4], stripes), row_range=(70, 200), row_base=1000)
    assert group.row_count == 130
    assert group.row_ids[0] == 1070 and group.row_ids[-1] == 1199


def test_uncovered_feature_is_absent_from_stripe():
    schema = make_schema(dense=2, sparse=1, scored=0, coverage=1.0)
    rows = [Sample(dense={1: 1.0}, sparse={3: [7]}, row_id=i) for i in range(10)]
    data, _ = _write(rows, schema, stripe_rows=10)
    f = ColumnarFile(data)
    assert 2 in f.stripe_footers[0].absent
    assert all(d.feature_id != 2 for d in f.stripe_footers[0].streams)
    got = list(read_rows(f, [0], FeatureProjection((2, 3)), f.plan([2, 3], [0])))
    assert got[0].dense == {} and got[0].sparse == {3: [7]}


def test_stream_order_follows_policy(schema, samples):
    weights = [(fid, float(fid % 3)) for fid in schema.ids()]
    data, footer = _write(samples, schema, stripe_rows=300, order=OrderPolicy.popularity(weights))
    f = ColumnarFile(data)
    seen = []
    for d in f.stripe_footers[0].streams:
        if d.feature_id != LABEL_FEATURE and d.feature_id not in seen:
            seen.append(d.feature_id)
    expected = [fid for fid in layout_order(schema, OrderPolicy.popularity(weights))
                if fid not in f.stripe_footers[0].absent]
    assert seen == expected
    assert footer.popularity == tuple(weights)
    kinds = {d.kind for d in f.stripe_footers[0].streams if d.feature_id == 7}
    assert kinds == {StreamKind.PRESENCE, StreamKind.LENGTHS, StreamKind.VALUES, StreamKind.SCORES}


def test_write_group_matches_sample_writer(schema, samples):
    a, _ = _write(samples, schema, stripe_rows=64)
    sink = io.BytesIO()
    writer = TableWriter(sink, schema, WriterConfig(stripe_rows=64))
    writer.write_group(InMemoryRowGroup.from_samples(samples, schema.kinds()))
    writer.close()
    assert sink.getvalue() == a


def test_schema_violations_are_rejected(schema):
    sink = io.BytesIO()
    writer = TableWriter(sink, schema)
    with pytest.raises(SchemaViolation) as info:
        writer.write(Sample(sparse={1: [1]}))
    assert info.value.row_index == 0
    with pytest.raises(SchemaViolation):
        writer.write(Sample(dense={999: 1.0}))
    with pytest.raises(SchemaViolation):
        writer.write(Sample(label=2.0))


def test_sink_failure_reports_bytes_written(schema, samples):
    class FailingSink:
        def __init__(self):
            self.n = 0

        def write(self, data):
            if self.n > 2:
                raise OSError("disk full")
            self.n += 1

    with pytest.raises(SinkWriteError) as info:
        write_table(samples, schema, WriterConfig(stripe_rows=16), FailingSink())
    assert info.value.bytes_written > 0


def test_truncation_is_always_detected(schema, samples):
    data, _ = _write(samples[:80], schema, stripe_rows=32)
    rng = np.random.default_rng(1)
    for cut in sorted(set(rng.integers(0, len(data), size=40).tolist())):
        with pytest.raises(FormatError):
            ColumnarFile(data[:cut])


def test_corruption_is_always_detected(schema, samples):
    data, _ = _write(samples[:80], schema, stripe_rows=32)
    rng = np.random.default_rng(2)
    for pos in rng.integers(HEADER.size, len(data), size=60).tolist():
        corrupt = bytearray(data)
        corrupt[pos] ^= 0x5A
        with pytest.raises(FormatError):
            f = ColumnarFile(bytes(corrupt))
            ids = f.footer.schema.ids()
            stripes = range(f.stripe_count)
            f.read_row_group(stripes, ids, f.plan(ids, stripes))


def test_checksum_error_names_the_stream(schema, samples):
    data, _ = _write(samples[:40], schema, stripe_rows=40)
    f = ColumnarFile(data)
    desc = next(d for d in f.stripe_footers[0].streams if d.feature_id == 4)
    corrupt = bytearray(data)
    corrupt[desc.offset] ^= 0xFF
    g = ColumnarFile(bytes(corrupt))
    with pytest.raises(ChecksumError, match=f"offset {desc.offset}"):
        g.read_row_group([0], [4], g.plan([4], [0]))
    # Streams of other features are still readable.
    assert g.read_row_group([0], [1], g.plan([1], [0])).row_count == 40


def test_unknown_feature_in_projection(schema, samples):
    data, _ = _write(samples[:10], schema)
    f = ColumnarFile(data)
    with pytest.raises(UnknownFeatureError):
        f.plan([1, 12345])


def test_layout_stats_account_for_every_byte(schema, samples):
    data, _ = _write(samples, schema, stripe_rows=64)
    stats = ColumnarFile(data).layout_stats()
    assert stats.file_bytes == len(data)
    assert stats.payload_bytes == sum(stats.per_feature.values())
    assert 0 < stats.overhead < 1


def test_flatmap_take_and_concat(schema, samples):
    group = InMemoryRowGroup.from_samples(samples, schema.kinds())
    assert group.check() == []
    picked = group.take(np.array([5, 1, 7]))
    assert list(picked.to_samples()) == [samples[5], samples[1], samples[7]]
    joined = InMemoryRowGroup.concat([group.slice(0, 10), group.slice(10, 25)])
    assert list(joined.to_samples()) == samples[:25]
    assert group.columns[1].kind == FeatureKind.DENSE


# -- catalog -----------------------------------------------------------------

def test_catalog_save_load(tmp_path, schema):
    catalog = TableCatalog(schema, extra={"seed": 3})
    catalog.add("p0/a.dsi", "p0", [10, 10])
    catalog.add("p1/b.dsi", "p1", [5])
    catalog.save(tmp_path)
    back = TableCatalog.load(tmp_path)
    assert back.row_count == 25 and back.partitions == ["p0", "p1"]
    assert back.files[1].row_base == 20
    assert back.resolve(back.files[0]) == str(tmp_path / "p0/a.dsi")
    assert back.extra == {"seed": 3}
    assert partition_rows(back) == {"p0": 20, "p1": 5}


def test_catalog_missing_partition(schema):
    with pytest.raises(MissingPartitionError):
        TableCatalog(schema).files_for("nope")


def test_many_features_round_trip():
    schema = make_schema(dense=40, sparse=30, scored=10, coverage=0.3)
    rows = make_samples(schema, 500, seed=9)
    data, _ = _write(rows, schema, stripe_rows=128, order=OrderPolicy.random(1))
    f = ColumnarFile(data)
    ids = schema.ids()
    stripes = range(f.stripe_count)
    assert list(f.read_row_group(stripes, ids, f.plan(ids, stripes)).to_samples()) == rows


def _assert_groups_equal(a, b):
    np.testing.assert_array_equal(a.row_ids, b.row_ids)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert set(a.columns) == set(b.columns)
    for fid, col in a.columns.items():
        other = b.columns[fid]
        np.testing.assert_array_equal(col.presence, other.presence)
        if col.kind == FeatureKind.DENSE:
            np.testing.assert_array_equal(col.values[col.presence], other.values[other.presence])
            continue
        np.testing.assert_array_equal(col.values, other.values)
        np.testing.assert_array_equal(col.offsets, other.offsets)
        if col.scores is not None:
            np.testing.assert_array_equal(col.scores, other.scores)


@pytest.mark.slow
def test_acceptance_scale_round_trip(tmp_path):
    from lib.bench.generator import generate_group
    from lib.bench.profiles import DatasetProfile

    profile = DatasetProfile("big", dense=1600, sparse=360, scored=40, coverage=0.3,
                             sparse_length=4.0, projection_dense=10, projection_sparse=5)
    schema = profile.schema()
    chunk, chunks = 5000, 10
    path = tmp_path / "big.dsi"
    with open(path, "wb") as sink:
        writer = TableWriter(sink, schema, WriterConfig(stripe_rows=chunk, codec=Codec.DEFLATE))
        for i in range(chunks):
            writer.write_group(generate_group(profile, chunk, seed=1, row_base=i * chunk,
                                              stream=i, schema=schema))
        writer.close()
    ids = schema.ids()
    with ColumnarFile(path) as f:
        assert f.row_count == chunk * chunks
        for i in range(chunks):
            back = f.read_row_group([i], ids, f.plan(ids, [i]))
            expected = generate_group(profile, chunk, seed=1, row_base=i * chunk,
                                      stream=i, schema=schema)
            _assert_groups_equal(expected, back)


@pytest.mark.slow
def test_projection_oracle_ten_percent(tmp_path):
    from lib.bench.generator import generate_group
    from lib.bench.profiles import DatasetProfile

    profile = DatasetProfile("proj", dense=60, sparse=30, scored=10, coverage=0.4,
                             sparse_length=3.0, projection_dense=6, projection_sparse=4)
    schema = profile.schema()
    group = generate_group(profile, 10_000, seed=4, schema=schema)
    sink = io.BytesIO()
    writer = TableWriter(sink, schema, WriterConfig(stripe_rows=2048, order=OrderPolicy.random(4)))
    writer.write_group(group)
    writer.close()
    f = ColumnarFile(sink.getvalue())
    ids = schema.ids()
    stripes = range(f.stripe_count)
    full = f.read_row_group(stripes, ids, f.plan(ids, stripes, window=None))
    rng = np.random.default_rng(7)
    for _ in range(100):
        proj = [int(v) for v in rng.choice(ids, size=len(ids) // 10, replace=False)]
        got = f.read_row_group(stripes, proj, f.plan(proj, stripes, window=int(rng.integers(64, 1 << 16))))
        _assert_groups_equal(full.project(proj), got)
