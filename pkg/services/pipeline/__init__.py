"""Pipeline orchestration: fusion, alpha sweep and full experiments."""

from services.pipeline.experiment import ExperimentResult, build_manifest, run_experiment, variant_names
from services.pipeline.experiment_config import (
    ExperimentConfig,
    load_experiment_config,
    parse_experiment_config,
)
from services.pipeline.fusion import (
    FusionWeights,
    fuse_runs,
    minmax,
    tune_fusion,
    tune_fusion_shared,
    weight_grid,
)
from services.pipeline.sweep import CheckpointSource, DevData, SweepResult, load_dev_set, sweep_alpha

__all__ = [
    'ExperimentResult', 'build_manifest', 'run_experiment', 'variant_names',
    'ExperimentConfig', 'load_experiment_config', 'parse_experiment_config',
    'FusionWeights', 'fuse_runs', 'minmax', 'tune_fusion', 'tune_fusion_shared', 'weight_grid',
    'CheckpointSource', 'DevData', 'SweepResult', 'load_dev_set', 'sweep_alpha',
]
