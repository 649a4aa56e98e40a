import json
import os

import pandas as pd
import pytest

import app
from config.experiment_config import config_from_dict
from experiments.definitions import REGISTRY, first_crossing, geometric_grid, stable_crossing
from experiments.runner import run_experiment
from models.errors import CorruptArtifactError
from utils.report import MANIFEST_NAME, SUMMARY_NAME, emit_report, verify_manifest


def _config(tmp_path, experiment, **overrides):
    data = {'experiment': experiment, 'output_dir': str(tmp_path / experiment), **overrides}
    return config_from_dict(data)


def test_grid_and_stable_crossing():
    assert geometric_grid(16, 2.0, 128) == [16, 32, 64, 128]
    assert stable_crossing([10, 20, 40, 80], [0.95, 0.7, 0.92, 0.99], 0.9) == 40.0
    assert pd.isna(stable_crossing([10, 20], [0.5, 0.6], 0.9))
    # a later dip below the level moves the stable crossing but not the first one
    assert first_crossing([10, 20, 40, 80], [0.95, 0.7, 0.92, 0.99], 0.9) == 10.0
    assert pd.isna(first_crossing([10, 20], [0.5, 0.6], 0.9))


@pytest.mark.parametrize('experiment', sorted(REGISTRY))
def test_every_table_and_chart_has_an_anchor(experiment):
    definition = REGISTRY[experiment]
    anchored = set(definition.artifact_anchors)
    assert 'aggregate.csv' in anchored
    assert {f"{table}.csv" for table in definition.tables} <= anchored
    assert any(name.endswith('.svg') for name in anchored)
    assert all(text.strip() for text in definition.artifact_anchors.values())


@pytest.mark.parametrize('experiment', sorted(REGISTRY))
def test_zero_replicates_write_header_only_files(tmp_path, experiment):
    result = run_experiment(_config(tmp_path, experiment, replicates=0))
    assert not result.passed
    replicates = pd.read_csv(os.path.join(result.output_dir, 'replicates.csv'))
    assert len(replicates) == 0
    assert list(replicates.columns) == REGISTRY[experiment].tables['replicates']
    for name in ('config.snapshot', 'aggregate.csv', 'criteria.csv', MANIFEST_NAME):
        assert os.path.isfile(os.path.join(result.output_dir, name))


def test_tightness_small_run_is_deterministic(tmp_path, monkeypatch):
    algorithm = {'n_grid': [10, 40]}
    monkeypatch.setenv('CREDIT_LAB_WORKERS', '1')
    first = run_experiment(_config(tmp_path / 'a', 'tightness', replicates=30, algorithm=algorithm))
    monkeypatch.setenv('CREDIT_LAB_WORKERS', '3')
    monkeypatch.setenv('CREDIT_LAB_SHARD_SIZE', '7')
    second = run_experiment(_config(tmp_path / 'b', 'tightness', replicates=30, algorithm=algorithm))
    for name in ('replicates.csv', 'aggregate.csv', 'criteria.csv'):
        with open(os.path.join(first.output_dir, name), 'rb') as f, open(os.path.join(second.output_dir, name), 'rb') as g:
            assert f.read() == g.read()
    aggregate = pd.read_csv(os.path.join(first.output_dir, 'aggregate.csv'))
    assert aggregate['n'].tolist() == [10, 40]
    assert (aggregate['replicates'] == 30).all()


def test_bounds_run_passes(tmp_path):
    result = run_experiment(_config(tmp_path, 'bounds', replicates=5))
    assert result.passed, result.criteria.to_string()
    assert os.path.isfile(os.path.join(result.output_dir, 'bounds.svg'))


def test_report_marks_results_and_detects_tampering(tmp_path):
    result = run_experiment(_config(tmp_path, 'bounds', replicates=3))
    summary = emit_report(str(tmp_path))
    assert os.path.basename(summary) == SUMMARY_NAME
    with open(summary, encoding='utf-8') as f:
        text = f.read()
    assert '## bounds: PASS' in text
    assert REGISTRY['bounds'].anchor in text
    assert f"bounds.svg → {REGISTRY['bounds'].artifact_anchors['bounds.svg']}" in text
    assert f"| aggregate.csv | {REGISTRY['bounds'].artifact_anchors['aggregate.csv']} |" in text

    manifest = verify_manifest(result.output_dir)
    assert 'replicates.csv' in manifest['files']
    assert set(manifest['anchors']) == {'bounds.svg', 'aggregate.csv', 'replicates.csv'}
    with open(os.path.join(result.output_dir, 'replicates.csv'), 'a') as f:
        f.write('tampered\n')
    with pytest.raises(CorruptArtifactError):
        emit_report(result.output_dir)


def test_cli_run_and_report(tmp_path):
    config_path = tmp_path / 'bounds.json'
    config_path.write_text(json.dumps({'experiment': 'bounds', 'replicates': 2}))
    out = tmp_path / 'artifacts'
    assert app.main(['run', str(config_path), '--check', '--out', str(out), '--seed', '4']) == app.EXIT_OK
    snapshot = json.loads((out / 'bounds' / 'config.snapshot').read_text())
    assert snapshot['master_seed'] == 4
    assert app.main(['report', str(out)]) == app.EXIT_OK
    assert (out / SUMMARY_NAME).is_file()


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps({'experiment': 'tightness', 'generator': {'tau': 2.0}}))
    assert app.main(['run', str(bad)]) == app.EXIT_CONFIG_ERROR
    empty = tmp_path / 'zero.json'
    empty.write_text(json.dumps({'experiment': 'tightness', 'replicates': 0}))
    out = str(tmp_path / 'out')
    assert app.main(['run', str(empty), '--check', '--out', out]) == app.EXIT_CHECK_FAILED
    assert app.main(['report', str(tmp_path / 'missing')]) == app.EXIT_RUN_ERROR
