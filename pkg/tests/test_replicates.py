import os

import pandas as pd
import pytest

from experiments.replicates import ReplicateScheduler
from models.errors import ReplicateError

TABLES = {'replicates': ['replicate', 'draw'], 'extra': ['replicate', 'k']}


def _replicate(replicate, rng):
    return {
        'replicates': [{'draw': float(rng.random())}],
        'extra': [{'k': k} for k in range(replicate % 3)],
    }


def test_shard_ranges():
    scheduler = ReplicateScheduler('demo', 0, TABLES, workers=2, shard_size=4)
    assert [list(r) for r in scheduler.shard_ranges(10)] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    assert scheduler.shard_ranges(0) == []


def test_merge_is_independent_of_workers_and_shards(tmp_path):
    one = ReplicateScheduler('demo', 7, TABLES, workers=1, shard_size=100).run(_replicate, 13, str(tmp_path / 'a'))
    many = ReplicateScheduler('demo', 7, TABLES, workers=4, shard_size=3).run(_replicate, 13, str(tmp_path / 'b'))
    for name in TABLES:
        pd.testing.assert_frame_equal(one[name], many[name])
    assert one['replicates']['replicate'].tolist() == list(range(13))
    assert len(os.listdir(tmp_path / 'b' / 'replicates')) == 5


def test_zero_replicates_give_header_only_tables(tmp_path):
    merged = ReplicateScheduler('demo', 0, TABLES).run(_replicate, 0, str(tmp_path))
    assert list(merged['replicates'].columns) == TABLES['replicates']
    assert len(merged['replicates']) == 0


def test_failures_carry_the_replicate_range(tmp_path):
    def failing(replicate, rng):
        if replicate == 5:
            raise ValueError("boom")
        return _replicate(replicate, rng)

    scheduler = ReplicateScheduler('demo', 0, TABLES, workers=2, shard_size=4)
    with pytest.raises(ReplicateError) as info:
        scheduler.run(failing, 10, str(tmp_path))
    assert (info.value.first, info.value.last) == (4, 7)
    assert info.value.experiment == 'demo'
    status = scheduler.get_job_status()
    assert status['failed'] == 1
    assert status['completed'] == 2
