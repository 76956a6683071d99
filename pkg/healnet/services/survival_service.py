"""Discrete-time survival: binning, hazards, likelihood, weights and concordance."""
from dataclasses import replace

import numpy as np

from healnet.models import tensor as T
from healnet.models.survival_record import BinEdges, record_arrays
from healnet.models.tensor import Tensor
from healnet.utils.errors import ContractError, DiscretizationError, UndefinedCIndexError

LOG_FLOOR = 1e-7


def discretize(records, k=4):
    """Quantile bins of the uncensored survival times, applied to every record.

    Cut points use linear interpolation between order statistics.
    Returns ``(BinEdges, labeled_records)``.
    """
    months, censored, _ = record_arrays(records)
    uncensored = months[censored == 0]
    if np.unique(uncensored).size < k:
        raise DiscretizationError(
            f"need at least {k} distinct uncensored survival times to build {k} bins, "
            f"found {np.unique(uncensored).size}"
        )
    edges = np.quantile(uncensored, np.arange(1, k) / k, method="linear")
    if np.any(np.diff(edges) <= 0):
        raise DiscretizationError(f"quantile edges are not strictly increasing: {edges.tolist()}")

    bins = np.searchsorted(edges, months, side="right")
    counts = np.bincount(bins, minlength=k)
    labeled = [replace(r, bin=int(b)) for r, b in zip(records, bins)]
    return BinEdges(edges=edges, counts=counts), labeled


def hazards(logits: Tensor) -> Tensor:
    return T.sigmoid(logits)


def survival_curve(hazard: Tensor) -> Tensor:
    """``S(b) = prod_{i <= b} (1 - h(i))`` along the last axis."""
    ones = Tensor(np.ones(hazard.shape[-1:]))
    return T.cumprod_last(T.sub(ones, hazard))


def _log_floor(x):
    return T.log(T.clip(x, low=LOG_FLOOR))


def nll_from_arrays(hazard: Tensor, bins, censored, weights) -> Tensor:
    """Weighted discrete-time negative log-likelihood, averaged over the batch.

    Uncensored: ``-w_y [log S(y-1) + log h(y)]`` with ``S(-1) = 1``.
    Censored: ``-w_y log S(y)``.
    """
    bins = np.asarray(bins, dtype=np.int64)
    censored = np.asarray(censored, dtype=bool)
    weights = np.asarray(weights, dtype=np.float64)
    n, k = hazard.shape
    if bins.shape != (n,) or censored.shape != (n,):
        raise ContractError(f"labels for {bins.shape} samples, hazards for {n}")
    if weights.shape != (k,):
        raise ContractError(f"{weights.shape[0]} class weights for {k} bins")
    if bins.min(initial=0) < 0 or bins.max(initial=0) >= k:
        raise ContractError(f"bin labels must lie in [0, {k - 1}]")

    surv = survival_curve(hazard)
    padded = T.concat_last_axis([Tensor(np.ones((n, 1))), surv])
    s_prev = T.gather_last(padded, bins)
    s_this = T.gather_last(padded, bins + 1)
    h_this = T.gather_last(hazard, bins)

    uncensored_loss = T.scale(T.add(_log_floor(s_prev), _log_floor(h_this)), -1.0)
    censored_loss = T.scale(_log_floor(s_this), -1.0)
    per_sample = T.where(censored, censored_loss, uncensored_loss)
    weighted = T.mul(per_sample, Tensor(weights[bins]))
    return T.mean(weighted)


def nll_loss(hazard: Tensor, records, weights) -> Tensor:
    _, censored, bins = record_arrays(records)
    if bins is None:
        unlabeled = [r.sample_id for r in records if r.bin is None]
        raise ContractError(f"records without a survival bin: {unlabeled[:5]}")
    return nll_from_arrays(hazard, bins, censored, weights)


def class_weights(counts):
    """Inverse bin frequencies scaled to mean 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        empty = np.flatnonzero(counts < 1).tolist()
        raise DiscretizationError(
            f"survival bin(s) {empty} have no samples; reduce the number of bins (num_bins)"
        )
    weights = counts.sum() / counts
    return weights / weights.mean()


def risk_score(hazard):
    """Negative summed survival; higher means shorter expected survival."""
    h = hazard.data if isinstance(hazard, Tensor) else np.asarray(hazard)
    surv = np.cumprod(1.0 - h.astype(np.float64), axis=-1)
    return -surv.sum(axis=-1)


def harrell_c(risk, months, censored):
    """Harrell's concordance over comparable pairs.

    A pair is comparable when the earlier time is an observed event and the
    times differ. Risk ties score one half.
    """
    risk = np.asarray(risk, dtype=np.float64)
    months = np.asarray(months, dtype=np.float64)
    event = np.asarray(censored) == 0
    if risk.shape[0] < 2:
        raise ContractError("concordance needs at least two samples")

    earlier = (months[:, None] < months[None, :]) & event[:, None]
    comparable = int(earlier.sum())
    if comparable == 0:
        raise UndefinedCIndexError("no comparable pairs: c-index is undefined")
    concordant = int((earlier & (risk[:, None] > risk[None, :])).sum())
    tied = int((earlier & (risk[:, None] == risk[None, :])).sum())
    return (concordant + 0.5 * tied) / comparable


def concordance_index(risk, records):
    months, censored, _ = record_arrays(records)
    return harrell_c(risk, months, censored)
