import logging

from billiard import Pool

from healnet.extensions import init_logging

logger = logging.getLogger(__name__)


def _init_worker(level):
    init_logging(level)


def _train_one(args):
    from healnet.services.training_service import run_fold

    dataset, split, run_config, num_bins = args
    return run_fold(dataset, split, run_config, num_bins)


def run_folds_parallel(dataset, splits, run_config, num_bins, jobs):
    """Train folds in a billiard process pool. Results come back in fold order."""
    level = logging.getLogger("healnet").getEffectiveLevel()
    jobs = min(jobs, len(splits))
    logger.info("training %d fold(s) on %d worker process(es)", len(splits), jobs)
    work = [(dataset, split, run_config, num_bins) for split in splits]
    with Pool(processes=jobs, initializer=_init_worker, initargs=(level,)) as pool:
        return pool.map(_train_one, work)
