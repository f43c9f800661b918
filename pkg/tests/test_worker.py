import time

import numpy as np
import pytest

from lib.core.errors import ConfigError
from lib.core.model import FeatureProjection, SessionSpec, Split
from lib.dpp.master import Master, MasterConfig
from lib.dpp.wire import Signal
from lib.dpp.worker import Worker, WorkerConfig, WorkerGone
from lib.storage.reader import ColumnarFile
from lib.transforms.graph import chain_example, identity_graph

PROJECTION = (1, 2, 13, 14, 19)


def _session(catalog, graph=None, batch_size=100, split_size=700):
    return SessionSpec(catalog.schema.name, tuple(catalog.partitions), FeatureProjection(PROJECTION),
                       graph or identity_graph(), batch_size=batch_size, split_size=split_size)


def _worker(master, **cfg):
    cfg.setdefault("worker_id", "w")
    cfg.setdefault("buffer_capacity", 100)
    return Worker(master, WorkerConfig(**cfg))


def _drain(worker, count):
    return [worker.serve_batch() for _ in range(count)]


def test_split_is_acked_after_its_last_batch(tiny_table):
    master = Master(_session(tiny_table), tiny_table)
    worker = _worker(master)
    worker.register()
    split = master.next_split("w")
    assert worker.run_split(split) == 7
    assert worker.buffered == 7
    served = _drain(worker, 6)
    assert master.progress()["completed"] == 0
    served += _drain(worker, 1)
    assert master.progress()["completed"] == 1
    assert worker.counters.splits_completed == 1
    assert [b.batch_id for b in served] == list(range(7))
    row_ids = np.concatenate([b.row_ids for b in served])
    np.testing.assert_array_equal(row_ids, np.arange(split.row_first, split.row_last))
    assert worker.serve_batch() is Signal.PENDING


def test_extract_matches_a_per_stream_read(tiny_table):
    master = Master(_session(tiny_table), tiny_table)
    worker = _worker(master)
    worker.register()
    split = master.next_split("w")  # rows 0-700 straddle the first stripe boundary
    assert split.stripe_first != split.stripe_last
    group = worker.extract(split)

    f = ColumnarFile(split.path)
    stripes = list(split.stripes())
    local = (split.row_first - split.file_row_base, split.row_last - split.file_row_base)
    want = f.read_row_group(stripes, list(PROJECTION), f.plan(list(PROJECTION), stripes, window=None),
                            row_range=local, row_base=split.file_row_base)
    assert group.row_count == split.row_count
    np.testing.assert_array_equal(group.row_ids, want.row_ids)
    np.testing.assert_array_equal(group.labels, want.labels)
    for fid in PROJECTION:
        np.testing.assert_array_equal(group.columns[fid].presence, want.columns[fid].presence)
        np.testing.assert_array_equal(group.columns[fid].values, want.columns[fid].values)


def test_transform_graph_runs_on_extracted_rows(tiny_table):
    graph = chain_example(1, 13)
    master = Master(_session(tiny_table, graph), tiny_table)
    worker = _worker(master)
    worker.register()
    worker.run_split(master.next_split("w"))
    batch = worker.serve_batch()
    for output in graph.outputs:
        assert output in batch.dense or output in batch.sparse
    assert batch.problems() == []


def test_unreadable_split_is_abandoned(tiny_table, tmp_path):
    master = Master(_session(tiny_table), tiny_table)
    worker = _worker(master)
    worker.register()
    bogus = Split(0, str(tmp_path / "missing.dsi"), 0, 0, 0, 100, 0)
    assert worker.run_split(bogus) == 0
    assert worker.counters.splits_abandoned == 1
    assert master.progress()["completed"] == 0


def test_manifest_must_match_session(tiny_table, tmp_path):
    manifest = tmp_path / "graph.txt"
    manifest.write_text(chain_example(1, 13).to_manifest())
    master = Master(_session(tiny_table), tiny_table)
    with pytest.raises(ConfigError):
        _worker(master, manifest=str(manifest)).register()
    master = Master(_session(tiny_table, chain_example(1, 13)), tiny_table)
    assert _worker(master, manifest=str(manifest)).register().graph == chain_example(1, 13)


def test_stats_and_metrics(tiny_table):
    master = Master(_session(tiny_table), tiny_table)
    worker = _worker(master, buffer_capacity=10)
    worker.register()
    worker.run_split(master.next_split("w"))
    stats = worker.report_stats()
    assert stats.buffered_batches == 7
    assert stats.memory == pytest.approx(0.7)
    assert worker.metrics_line().startswith("dsi_worker,worker=w buffered=7,")


def test_killed_worker_refuses_requests(tiny_table):
    master = Master(_session(tiny_table), tiny_table)
    worker = _worker(master)
    worker.register()
    worker.run_split(master.next_split("w"))
    worker.kill()
    with pytest.raises(WorkerGone):
        worker.serve_batch()
    with pytest.raises(ConnectionError):
        worker.get_batch()


def test_threaded_worker_serves_the_whole_table(tiny_table):
    master = Master(_session(tiny_table), tiny_table, MasterConfig(heartbeat_interval_s=0.5))
    worker = _worker(master, buffer_capacity=4, heartbeat_s=0.05, poll_s=0.002).start()
    rows = []
    deadline = time.monotonic() + 60
    try:
        while time.monotonic() < deadline:
            got = worker.serve_batch()
            if got is Signal.END_OF_DATA:
                break
            if got is Signal.PENDING:
                time.sleep(0.002)
                continue
            rows.extend(got.row_ids.tolist())
    finally:
        worker.stop()
    assert sorted(rows) == list(range(tiny_table.row_count))
    assert master.done
    assert worker.finished
