import logging

import numpy as np
import pytest

from lib.core.config import coerce_fields, parse_kv
from lib.core.errors import ConfigError
from lib.core.hashing import fnv1a64, h64, h64_array, h64_concat, h64_concat_array, to_int64
from lib.core.log import configure_logging, resolve_level
from lib.core.model import (
    FeatureId,
    FeatureKind,
    FeatureProjection,
    FeatureSpec,
    Sample,
    SessionSpec,
    TensorBatch,
    WorkerStats,
)
from lib.core.session import session_from_dict, session_to_dict, validate_session
from lib.dpp.worker import WorkerConfig
from lib.transforms.graph import TransformGraph, chain_example, identity_graph, node_from


def _spec(projection, graph=None, **kw):
    return SessionSpec("t", ("p0",), FeatureProjection(tuple(projection)),
                       graph or identity_graph(), **kw)


def test_fnv_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_array_hashes_match_scalar():
    ids = np.array([0, 1, -1, 2**62, -(2**40), 123456789], dtype=np.int64)
    assert h64_array(ids).tolist() == [h64(int(v)) for v in ids]
    a, b = ids, ids[::-1].copy()
    assert h64_concat_array(a, b).tolist() == [h64_concat((int(x), int(y))) for x, y in zip(a, b)]
    assert to_int64(2**64 - 1) == -1


def test_feature_id_bounds():
    with pytest.raises(ValueError):
        FeatureId(-1, FeatureKind.DENSE)
    with pytest.raises(ValueError):
        FeatureSpec(FeatureId(1, FeatureKind.DENSE), coverage=0.5, mean_length=3.0)
    with pytest.raises(ValueError):
        FeatureSpec(FeatureId(1, FeatureKind.SPARSE), coverage=1.5)


def test_schema_rejects_duplicate_ids(schema):
    with pytest.raises(ValueError):
        type(schema)("x", "p0", schema.features + schema.features[:1])
    assert schema.kind_of(1) == FeatureKind.DENSE
    assert schema.kind_of(999) is None
    assert type(schema).from_dict(schema.to_dict()) == schema


def test_projection_dedups_and_keeps_order():
    p = FeatureProjection((5, 3, 5, 1))
    assert tuple(p) == (5, 3, 1)
    assert 3 in p and 4 not in p
    with pytest.raises(ValueError):
        FeatureProjection(())


def test_sample_project_drops_other_features():
    s = Sample(dense={1: 1.0, 2: 2.0}, sparse={4: [1, 2]}, scored={7: [(1, 0.5)]}, label=1.0, row_id=3)
    p = s.project([2, 7])
    assert p.dense == {2: 2.0} and p.sparse == {} and p.scored == {7: [(1, 0.5)]}
    assert p.row_id == 3


def test_session_spec_size_rules():
    with pytest.raises(ValueError):
        _spec([1], batch_size=0)
    with pytest.raises(ValueError):
        _spec([1], batch_size=100, split_size=10)
    with pytest.raises(ValueError):
        SessionSpec("t", (), FeatureProjection((1,)), identity_graph())


def test_validate_session_reports_everything(schema):
    graph = TransformGraph([
        node_from(100, "sigrid_hash", [1], max=10),     # dense input: kind error
        node_from(101, "first_x", [555], x=2),          # dangling
        node_from(4, "sigrid_hash", [5], max=10),       # collides with projection
    ])
    report = validate_session(_spec([1, 4, 5, 999], graph), schema)
    assert not report.ok
    assert report.missing_features == [999]
    assert (101, 555) in report.dangling_inputs
    assert report.kind_errors and "input 1 is DENSE" in report.kind_errors[0]
    assert report.output_collisions == [4]
    assert len(str(report).splitlines()) == len(report.problems())


def test_validate_session_detects_cycle(schema):
    graph = TransformGraph([
        node_from(100, "first_x", [101], x=1),
        node_from(101, "first_x", [100], x=1),
    ])
    report = validate_session(_spec([4], graph), schema)
    assert sorted(report.cycle) == [100, 101]


def test_valid_session_and_dict_round_trip(schema):
    spec = _spec([1, 4], chain_example(1, 4), batch_size=8, split_size=64)
    assert validate_session(spec, schema).ok
    back = session_from_dict(session_to_dict(spec))
    assert back.digest() == spec.digest()
    assert back.graph == spec.graph


def test_digest_changes_with_projection():
    assert _spec([1, 2]).digest() != _spec([2, 1]).digest()
    assert _spec([1, 2]).digest() == _spec([1, 2]).digest()


def test_tensor_batch_problems():
    batch = TensorBatch(0, 2, np.zeros(2, np.float32), np.arange(2),
                        sparse={3: (np.array([1, 2]), np.array([0, 2, 2], dtype=np.int32))})
    assert batch.problems() == []
    assert batch.sparse_row(3, 0) == [1, 2]
    batch.sparse[3] = (np.array([1, 2]), np.array([0, 3, 2], dtype=np.int32))
    assert any("monotone" in p for p in batch.problems())
    with pytest.raises(ValueError):
        batch.validate()


def test_worker_stats_bounds():
    with pytest.raises(ValueError):
        WorkerStats(cpu=1.5)
    with pytest.raises(ValueError):
        WorkerStats(buffered_batches=-1)


def test_kv_config_parsing_and_coercion(tmp_path):
    values = parse_kv("# comment\n\nbuffer_capacity = 16\nstages=2,3,1\nmaster=h:1\n")
    cfg = WorkerConfig.from_mapping(values)
    assert cfg.buffer_capacity == 16 and cfg.stages == (2, 3, 1) and cfg.master == "h:1"
    with pytest.raises(ConfigError):
        parse_kv("no equals sign")
    with pytest.raises(ConfigError):
        coerce_fields(WorkerConfig, {"nope": "1"})
    with pytest.raises(ConfigError):
        coerce_fields(WorkerConfig, {"buffer_capacity": "many"})
    path = tmp_path / "w.conf"
    path.write_text("buffer_capacity=4\nworker_id=a\n")
    cfg = WorkerConfig.from_file(path, worker_id="b")
    assert cfg.buffer_capacity == 4 and cfg.worker_id == "b"


def test_log_level_from_env(monkeypatch):
    monkeypatch.setenv("DSI_LOG", "debug")
    assert resolve_level() == logging.DEBUG
    assert resolve_level("error") == logging.ERROR
    monkeypatch.delenv("DSI_LOG")
    assert resolve_level() == logging.WARNING
    root = configure_logging("info")
    configure_logging("info")
    assert sum(1 for h in root.handlers if getattr(h, "_dsi", False)) == 1
