import math

RESULT_PREFIX = "result."


def format_float(value):
    """Shortest round-tripping text for a float; ``nan`` for missing values."""
    if value is None:
        return "nan"
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def format_floats(values):
    return ",".join(format_float(v) for v in values)


def serialize_fold(fold, split=None):
    row = {
        "fold": fold.fold,
        "status": fold.status,
        "seed": fold.seed,
        "epochs_run": fold.epochs_run,
        "best_epoch": fold.best_epoch if fold.best_epoch is not None else "",
        "test_cindex": fold.test_cindex,
        "best_val_loss": fold.val_loss[fold.best_epoch - 1] if fold.best_epoch else math.nan,
        "final_train_loss": fold.train_loss[-1] if fold.train_loss else math.nan,
    }
    if split is not None:
        row.update(n_train=len(split.train), n_val=len(split.val), n_test=len(split.test))
    row["error"] = fold.error
    return row


def serialize_cross_validation(cv, dataset=None):
    """``result.*`` entries for ``report.kv``; everything but wall time."""
    entries = {}
    if dataset is not None:
        entries["n_samples"] = str(dataset.n)
        entries["modalities_used"] = ",".join(dataset.modality_names)
    entries["bin_edges"] = format_floats(cv.edges.edges)
    entries["bin_counts"] = ",".join(str(int(c)) for c in cv.edges.counts)
    entries["folds_run"] = str(len(cv.folds))
    entries["folds_ok"] = str(len(cv.succeeded))
    entries["cindex_mean"] = format_float(cv.mean_cindex)
    entries["cindex_std"] = format_float(cv.std_cindex)
    for fold in cv.folds:
        key = f"fold{fold.fold}."
        entries[key + "status"] = fold.status
        entries[key + "seed"] = str(fold.seed)
        entries[key + "test_cindex"] = format_float(fold.test_cindex)
        entries[key + "best_epoch"] = "" if fold.best_epoch is None else str(fold.best_epoch)
        entries[key + "train_loss"] = format_floats(fold.train_loss)
        entries[key + "val_loss"] = format_floats(fold.val_loss)
        entries[key + "val_cindex"] = format_floats(fold.val_cindex)
        if fold.error:
            entries[key + "error"] = " ".join(fold.error.split())
    return {RESULT_PREFIX + key: value for key, value in entries.items()}
