# Initialization file for the tasks module

from .fold_tasks import run_folds_parallel

__all__ = [
    'run_folds_parallel'
]
