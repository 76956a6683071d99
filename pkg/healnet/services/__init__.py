# Initialization file for the services module

from .survival_service import (
    discretize,
    hazards,
    survival_curve,
    nll_loss,
    class_weights,
    risk_score,
    concordance_index,
)
from .optimizer_service import AdamState, adam_step, onecycle_lr, l1_penalty, l2_penalty
from .dataset_service import concat_modalities, join_modalities, load_data_dir, load_inputs, save_data_dir
from .synthetic_service import generate_synthetic
from .training_service import EarlyStopping, FoldResult, train_fold, cross_validate
from .evaluation_service import parse_drop_plan, evaluate_missing
from .inspection_service import sample_attention, export_attention
from .gradcheck_service import grad_check, run_suite
from .config_service import load_run_config

__all__ = [
    'discretize',
    'hazards',
    'survival_curve',
    'nll_loss',
    'class_weights',
    'risk_score',
    'concordance_index',
    'AdamState',
    'adam_step',
    'onecycle_lr',
    'l1_penalty',
    'l2_penalty',
    'join_modalities',
    'load_data_dir',
    'load_inputs',
    'concat_modalities',
    'save_data_dir',
    'generate_synthetic',
    'EarlyStopping',
    'FoldResult',
    'train_fold',
    'cross_validate',
    'parse_drop_plan',
    'evaluate_missing',
    'sample_attention',
    'export_attention',
    'grad_check',
    'run_suite',
    'load_run_config',
]
