import pytest

from lib.bench.generator import gen_dataset, sample_session
from lib.bench.profiles import DatasetProfile
from lib.dpp.local import LocalCluster, cluster_master_config
from lib.dpp.worker import WorkerConfig


def _cluster(catalog, batch_size=100, split_size=400, **kw):
    spec = sample_session(catalog, seed=2, batch_size=batch_size, split_size=split_size)
    worker_cfg = WorkerConfig(buffer_capacity=4, heartbeat_s=0.1, poll_s=0.002)
    return LocalCluster(spec, catalog, worker_cfg=worker_cfg, **kw)


def test_failure_free_run_is_exactly_once(tiny_table):
    cluster = _cluster(tiny_table, workers=4, clients=2)
    try:
        report = cluster.run(timeout=120)
    finally:
        cluster.stop()
    assert not report.timed_out
    assert report.exactly_once, report.summary()
    assert len(report.delivered) == tiny_table.row_count
    assert report.max_connections <= 4
    assert cluster.master.done
    assert cluster.master.counters.duplicates == 0


def test_every_worker_serves_batches(tiny_table):
    cluster = _cluster(tiny_table, batch_size=50, split_size=200, workers=3, clients=1)
    try:
        report = cluster.run(timeout=120)
    finally:
        cluster.stop()
    assert report.exactly_once
    assert len(report.served_by) == 3
    assert all(n > 0 for n in report.served_by.values())


def test_batches_reach_the_callback(tiny_table):
    seen = []
    cluster = _cluster(tiny_table, workers=2, clients=1)
    try:
        report = cluster.run(timeout=120, on_batch=lambda b: seen.append(b.row_count))
    finally:
        cluster.stop()
    assert sum(seen) == tiny_table.row_count
    assert len(seen) == report.batches


def test_cluster_needs_workers_and_clients(tiny_table):
    with pytest.raises(ValueError):
        _cluster(tiny_table, workers=0)
    assert cluster_master_config(lease_ttl_s=5).lease_ttl_s == 5


@pytest.mark.slow
def test_kills_and_master_restart_lose_nothing(tmp_path):
    profile = DatasetProfile("failures", dense=10, sparse=6, scored=1, coverage=0.5, sparse_length=3.0,
                             rows_per_partition=4000, partitions=2, files_per_partition=2,
                             projection_dense=4, projection_sparse=3)
    catalog = gen_dataset(profile, tmp_path / "table", seed=9, stripe_rows=500)
    cluster = _cluster(catalog, batch_size=50, split_size=200, workers=4, clients=2,
                       master_cfg=cluster_master_config(checkpoint_dir=str(tmp_path / "ckpt")))
    try:
        report = cluster.run(kills=10, restart_master=True, seed=4, timeout=300)
    finally:
        cluster.stop()
    assert not report.timed_out, report.summary()
    assert report.kills == 10 and report.restarts == 1
    assert report.at_least_once, report.summary()
    assert report.duplicates <= report.duplicate_bound
    assert list((tmp_path / "ckpt").glob("checkpoint-*.dsck"))
