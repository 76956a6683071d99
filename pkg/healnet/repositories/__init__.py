# Initialization file for the repositories module

from .tabular_repository import TabularRepository
from .patch_feature_repository import PatchFeatureRepository
from .survival_repository import SurvivalRepository
from .checkpoint_repository import Checkpoint, CheckpointRepository
from .report_repository import ReportRepository

__all__ = [
    'TabularRepository',
    'PatchFeatureRepository',
    'SurvivalRepository',
    'Checkpoint',
    'CheckpointRepository',
    'ReportRepository',
]
