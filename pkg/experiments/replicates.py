"""
Replicate Shard Scheduler
-------------------------
This module runs an experiment's replicates in shards on a thread pool.
It includes functionality for:
- Splitting replicates into fixed-size shards
- Running shard jobs concurrently with per-replicate random streams
- Writing one CSV per shard and table, then merging them in replicate order
- Tracking job status and execution times per shard

Every replicate draws from replicate_stream(master_seed, replicate), so the
merged tables do not depend on worker count or completion order.
"""

import os
import time
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import get_shard_size, get_worker_count
from models.errors import ReplicateError
from utils.rng import replicate_stream

logger = logging.getLogger(__name__)

# replicate function: (replicate index, stream) -> {table name: rows}
ReplicateFunction = Callable[[int, np.random.Generator], Dict[str, List[Dict[str, Any]]]]


class ReplicateScheduler:
    """Class to run replicate shards of one experiment on a worker pool"""

    def __init__(self, experiment: str, master_seed: int, tables: Dict[str, Sequence[str]],
                 workers: Optional[int] = None, shard_size: Optional[int] = None):
        """
        Initialize the scheduler

        Args:
            experiment: Experiment name, used in logs and errors
            master_seed: Master seed of the replicate streams
            tables: Table name -> declared CSV columns
            workers: Worker threads. If None, uses CREDIT_LAB_WORKERS
            shard_size: Replicates per shard. If None, uses CREDIT_LAB_SHARD_SIZE
        """
        self.experiment = experiment
        self.master_seed = int(master_seed)
        self.tables = {name: list(columns) for name, columns in tables.items()}
        self.workers = workers or get_worker_count()
        self.shard_size = shard_size or get_shard_size()
        self.last_run_times: Dict[str, Dict[str, Any]] = {}
        self._lock = threading.Lock()

    def shard_ranges(self, replicates: int) -> List[range]:
        return [range(first, min(first + self.shard_size, replicates))
                for first in range(0, replicates, self.shard_size)]

    def _shard_path(self, out_dir: str, table: str, shard: int) -> str:
        return os.path.join(out_dir, table, f"shard_{shard:04d}.csv")

    def _frame(self, table: str, rows: List[Dict[str, Any]]) -> pd.DataFrame:
        return pd.DataFrame(rows, columns=self.tables[table])

    def _run_shard(self, replicate_fn: ReplicateFunction, shard: int, replicates: range, out_dir: str) -> None:
        job_name = f"{self.experiment}/shard_{shard:04d}"
        start_time = time.time()
        try:
            collected: Dict[str, List[Dict[str, Any]]] = {name: [] for name in self.tables}
            for replicate in replicates:
                produced = replicate_fn(replicate, replicate_stream(self.master_seed, replicate))
                for name, rows in produced.items():
                    collected[name].extend({'replicate': replicate, **row} for row in rows)
            for name, rows in collected.items():
                self._frame(name, rows).to_csv(self._shard_path(out_dir, name, shard), index=False)
            execution_time = time.time() - start_time
            with self._lock:
                self.last_run_times[job_name] = {
                    'start_time': datetime.fromtimestamp(start_time),
                    'execution_time': execution_time,
                    'replicates': (replicates.start, replicates.stop - 1),
                    'success': True
                }
            logger.info(f"Shard {job_name} ({len(replicates)} replicates) completed in {execution_time:.2f} seconds")
        except Exception as e:
            logger.error(f"Error in shard {job_name}: {str(e)}")
            with self._lock:
                self.last_run_times[job_name] = {
                    'start_time': datetime.fromtimestamp(start_time),
                    'execution_time': time.time() - start_time,
                    'replicates': (replicates.start, replicates.stop - 1),
                    'success': False,
                    'error': str(e)
                }
            raise ReplicateError(self.experiment, replicates.start, replicates.stop - 1, e) from e

    def run(self, replicate_fn: ReplicateFunction, replicates: int, out_dir: str) -> Dict[str, pd.DataFrame]:
        """
        Run all replicates and merge the shard files

        Args:
            replicate_fn: Function producing the rows of one replicate
            replicates: Number of replicates (0 gives header-only tables)
            out_dir: Experiment artifact directory

        Returns:
            Table name -> merged DataFrame in replicate order
        """
        for name in self.tables:
            os.makedirs(os.path.dirname(self._shard_path(out_dir, name, 0)), exist_ok=True)
        shards = self.shard_ranges(replicates)
        logger.info(f"Running {replicates} replicates of {self.experiment} in {len(shards)} shards "
                    f"on {self.workers} workers")

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = [pool.submit(self._run_shard, replicate_fn, i, shard, out_dir)
                       for i, shard in enumerate(shards)]
            # first failure in shard order wins
            for future in futures:
                future.result()

        merged = {}
        for name in self.tables:
            frames = [pd.read_csv(self._shard_path(out_dir, name, i)) for i in range(len(shards))]
            frames = [f for f in frames if len(f)]
            merged[name] = (pd.concat(frames, ignore_index=True)[self.tables[name]] if frames
                            else self._frame(name, []))
        return merged

    def get_job_status(self) -> Dict[str, Any]:
        """
        Get the status of shard jobs

        Returns:
            Dictionary with job status information
        """
        with self._lock:
            runs = dict(self.last_run_times)
        return {
            'experiment': self.experiment,
            'workers': self.workers,
            'shard_size': self.shard_size,
            'completed': sum(1 for r in runs.values() if r['success']),
            'failed': sum(1 for r in runs.values() if not r['success']),
            'last_run_times': runs
        }
