"""
Experiment Runner
-----------------
This module runs one configured experiment end to end.
It includes functionality for:
- Writing config.snapshot and the sharded per-replicate tables
- Aggregation, acceptance criteria and charts derived from the merged CSVs
- The artifact manifest with checksums
"""

import os
import shutil
import logging
from dataclasses import dataclass
from typing import Dict, List

import pandas as pd

from config.experiment_config import SNAPSHOT_NAME, ExperimentConfig
from experiments.definitions import CRITERIA_COLUMNS, get_experiment
from experiments.replicates import ReplicateScheduler
from utils import report

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    experiment: str
    output_dir: str
    passed: bool
    criteria: pd.DataFrame


def _table_file(name: str) -> str:
    return f"{name}.csv"


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """
    Run an experiment and write its artifact directory

    Aggregates, criteria and charts are computed from the merged CSVs as
    read back from disk.

    Args:
        config: Validated ExperimentConfig

    Returns:
        ExperimentResult with the pass flag of every acceptance criterion
    """
    definition = get_experiment(config.experiment)
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    logger.info(f"Starting experiment {config.experiment}: {config.replicates} replicates, "
                f"master seed {config.master_seed}, output {out_dir}")

    config.write_snapshot(out_dir)
    context = definition.prepare(config.generator, config.algorithm)

    for name in definition.tables:
        shutil.rmtree(os.path.join(out_dir, name), ignore_errors=True)
    scheduler = ReplicateScheduler(config.experiment, config.master_seed, definition.tables)
    merged_tables = scheduler.run(lambda replicate, rng: definition.replicate(context, replicate, rng),
                                  config.replicates, out_dir)

    artifacts: List[str] = [SNAPSHOT_NAME]
    tables: Dict[str, pd.DataFrame] = {}
    for name, merged in merged_tables.items():
        shards = sorted(os.listdir(os.path.join(out_dir, name)))
        merged.to_csv(os.path.join(out_dir, _table_file(name)), index=False)
        artifacts.append(_table_file(name))
        artifacts.extend(os.path.join(name, shard) for shard in shards)
        tables[name] = pd.read_csv(os.path.join(out_dir, _table_file(name)))

    aggregate = definition.aggregate(tables, context)
    aggregate.to_csv(os.path.join(out_dir, 'aggregate.csv'), index=False)
    criteria = definition.criteria(aggregate, tables, context, config.thresholds)
    criteria = criteria if len(criteria.columns) else pd.DataFrame(columns=CRITERIA_COLUMNS)
    criteria.to_csv(os.path.join(out_dir, 'criteria.csv'), index=False)
    artifacts += ['aggregate.csv', 'criteria.csv']

    charts = definition.plots(aggregate, tables, context, out_dir)
    artifacts += [os.path.relpath(path, out_dir) for path in charts]

    passed = bool(len(criteria)) and bool(criteria['passed'].astype(bool).all())
    report.write_manifest(out_dir, artifacts, {
        'experiment': config.experiment,
        'anchor': definition.anchor,
        'anchors': {a: definition.artifact_anchors[a] for a in artifacts if a in definition.artifact_anchors},
        'replicates': config.replicates,
        'master_seed': config.master_seed,
        'passed': passed,
    })

    failed = criteria[~criteria['passed'].astype(bool)]['criterion'].tolist() if len(criteria) else []
    if failed:
        logger.warning(f"{config.experiment}: {len(failed)} criteria failed: {', '.join(failed)}")
    logger.info(f"Finished experiment {config.experiment}: {'PASS' if passed else 'FAIL'}")
    return ExperimentResult(config.experiment, out_dir, passed, criteria)
