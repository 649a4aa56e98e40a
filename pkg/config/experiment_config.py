"""
Experiment Configuration Module
-------------------------------
This module loads and validates experiment configuration files.
It includes functionality for:
- Parsing JSON config files into ExperimentConfig
- Merging per-experiment defaults and rejecting unknown keys
- Applying command-line overrides
- Writing the merged configuration as config.snapshot
"""

import os
import json
import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from config.settings import get_output_root
from models.errors import ConfigValidationError

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {'experiment', 'generator', 'algorithm', 'replicates', 'master_seed', 'output_dir', 'thresholds'}
SNAPSHOT_NAME = 'config.snapshot'


@dataclass
class ExperimentConfig:
    """A validated experiment configuration with defaults filled in"""
    experiment: str
    generator: Dict[str, Any] = field(default_factory=dict)
    algorithm: Dict[str, Any] = field(default_factory=dict)
    replicates: int = 1
    master_seed: int = 0
    output_dir: str = ''
    thresholds: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def snapshot(self) -> str:
        """Canonical JSON text of the merged configuration"""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_snapshot(self, out_dir: str) -> str:
        path = os.path.join(out_dir, SNAPSHOT_NAME)
        with open(path, 'w') as f:
            f.write(self.snapshot())
        return path


def _merge_section(section: str, defaults: Dict[str, Any], given: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    given = given or {}
    if not isinstance(given, dict):
        raise ConfigValidationError(f"'{section}' must be an object, got {type(given).__name__}")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigValidationError(f"unknown {section} keys: {', '.join(unknown)}")
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(defaults[key], dict) and isinstance(value, dict) and key != 'traps':
            merged[key] = _merge_section(f"{section}.{key}", defaults[key], value)
        else:
            merged[key] = value
    return merged


def _as_int(name: str, value: Any, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigValidationError(f"'{name}' must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigValidationError(f"'{name}' must be >= {minimum}, got {value}")
    return value


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """
    Build and validate an ExperimentConfig from parsed JSON

    Args:
        data: Parsed configuration object

    Returns:
        ExperimentConfig with defaults merged in
    """
    # registry imports the analysis stack; keep config importable without it
    from experiments.definitions import get_experiment

    if not isinstance(data, dict):
        raise ConfigValidationError("configuration must be a JSON object")
    unknown = sorted(set(data) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigValidationError(f"unknown configuration keys: {', '.join(unknown)}")
    if 'experiment' not in data:
        raise ConfigValidationError("configuration has no 'experiment'")

    definition = get_experiment(data['experiment'])
    config = ExperimentConfig(
        experiment=definition.name,
        generator=_merge_section('generator', definition.generator_defaults, data.get('generator')),
        algorithm=_merge_section('algorithm', definition.algorithm_defaults, data.get('algorithm')),
        replicates=_as_int('replicates', data.get('replicates', definition.default_replicates), 0),
        master_seed=_as_int('master_seed', data.get('master_seed', 0), 0),
        output_dir=data.get('output_dir') or os.path.join(get_output_root(), definition.name),
        thresholds=_merge_section('thresholds', definition.threshold_defaults, data.get('thresholds')),
    )
    definition.validate(config.generator, config.algorithm)
    return config


def load_config(path: str) -> ExperimentConfig:
    """
    Load one JSON configuration file

    Args:
        path: Path of the config file

    Returns:
        Validated ExperimentConfig
    """
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigValidationError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigValidationError(f"{path}: invalid JSON: {str(e)}") from e
    try:
        return config_from_dict(data)
    except ConfigValidationError as e:
        raise ConfigValidationError(f"{path}: {str(e)}") from e


def apply_overrides(config: ExperimentConfig, replicates: Optional[int] = None, master_seed: Optional[int] = None,
                    output_root: Optional[str] = None) -> ExperimentConfig:
    """
    Apply command-line overrides

    Args:
        config: Loaded configuration
        replicates: Replicate count override
        master_seed: Master seed override
        output_root: Root directory; the experiment writes to <output_root>/<experiment>

    Returns:
        New ExperimentConfig
    """
    updated = copy.deepcopy(config)
    if replicates is not None:
        updated.replicates = _as_int('replicates', replicates, 0)
    if master_seed is not None:
        updated.master_seed = _as_int('master_seed', master_seed, 0)
    if output_root is not None:
        updated.output_dir = os.path.join(output_root, config.experiment)
    return updated


def collect_config_paths(path: str) -> List[str]:
    """A single config file, or every *.json in a directory in name order"""
    if os.path.isdir(path):
        paths = [os.path.join(path, name) for name in sorted(os.listdir(path)) if name.endswith('.json')]
        if not paths:
            raise ConfigValidationError(f"no *.json config files in {path}")
        return paths
    if not os.path.isfile(path):
        raise ConfigValidationError(f"config path not found: {path}")
    return [path]
