"""Synthetic cohorts with planted survival signal.

Two latent factors ``z1, z2 ~ N(0, 1)`` per sample. ``z1`` is written into
the first ``signal_features`` omic columns. Half of the slide patches are
"tissue" patches: a fixed signature plus ``z2`` along a second direction;
the rest are background noise.

The interaction log-risk is ``z1 * z2 + main_effect * (z1 + z2)``; the
weak main effect is what a single modality can still learn. Log survival
time is ``log(24) - log_risk + noise_sigma * log(E)`` with ``E ~ Exp(1)``:
exponential with rate ``exp(log_risk) / 24`` at ``noise_sigma = 1`` and
deterministic at 0.
"""
import logging
from dataclasses import dataclass

import numpy as np

from healnet.models.dataset import ModalityBlock, ModalityKind, MultiModalDataset, Provenance
from healnet.models.survival_record import SurvivalRecord
from healnet.schemas import Scenario, SynthScenario
from healnet.utils.rng import stream

logger = logging.getLogger(__name__)

BASE_MONTHS = 24.0
RISK_SCALE = 1.0
SIGNATURE_SCALE = 2.0


@dataclass(frozen=True)
class SyntheticTruth:
    z1: np.ndarray
    z2: np.ndarray
    log_risk: np.ndarray
    event_months: np.ndarray


def sample_ids(n):
    width = max(4, len(str(max(n - 1, 0))))
    return [f"s{i:0{width}d}" for i in range(n)]


def synthetic_truth(scenario: SynthScenario, seed) -> SyntheticTruth:
    rng = stream(seed, "synth", scenario.scenario.value, "latent")
    z1 = rng.standard_normal(scenario.n)
    z2 = rng.standard_normal(scenario.n)
    if scenario.scenario is Scenario.MODALITY_DOMINANCE:
        log_risk = RISK_SCALE * z1
    else:
        log_risk = RISK_SCALE * (z1 * z2 + scenario.main_effect * (z1 + z2))

    draw = stream(seed, "synth", scenario.scenario.value, "time").exponential(1.0, scenario.n)
    log_months = np.log(BASE_MONTHS) - log_risk + scenario.noise_sigma * np.log(draw)
    return SyntheticTruth(z1=z1, z2=z2, log_risk=log_risk, event_months=np.exp(log_months))


def _omic_block(name, ids, factor, scenario, rng):
    values = rng.standard_normal((scenario.n, scenario.p))
    if factor is not None:
        k = min(scenario.signal_features, scenario.p)
        values[:, :k] = factor[:, None] + scenario.noise_sigma * rng.standard_normal((scenario.n, k))
    return ModalityBlock(
        name=name,
        kind=ModalityKind.TABULAR,
        ids=ids,
        data=values[:, :, None],
        present=np.ones(scenario.n, dtype=bool),
        feature_names=[f"g{i}" for i in range(scenario.p)],
    )


def _tissue_directions(d_x, rng):
    """Unit signal direction and a signature orthogonal to it (zero when ``d_x == 1``)."""
    direction = rng.standard_normal(d_x)
    direction /= np.linalg.norm(direction)
    signature = rng.standard_normal(d_x)
    signature -= signature @ direction * direction
    norm = np.linalg.norm(signature)
    if d_x == 1 or norm == 0.0:
        return direction, np.zeros(d_x)
    return direction, signature / norm


def _patch_block(ids, factor, scenario, rng):
    n, t, d_x = scenario.n, scenario.t, scenario.d_x
    values = rng.standard_normal((n, t, d_x))
    if factor is not None:
        direction, signature = _tissue_directions(d_x, rng)
        carriers = max(1, t // 2)
        noise = scenario.noise_sigma * rng.standard_normal((n, carriers, d_x))
        values[:, :carriers] = SIGNATURE_SCALE * signature + factor[:, None, None] * direction + noise

    present = rng.random(n) >= scenario.missing_rate
    values[~present] = 0.0
    return ModalityBlock(
        name="wsi",
        kind=ModalityKind.PATCHES,
        ids=ids,
        data=values,
        present=present,
    )


def generate_synthetic(scenario: SynthScenario, seed=0) -> MultiModalDataset:
    """``omic`` (tabular) and ``wsi`` (patches), plus an all-noise ``noise`` table for the noise scenario."""
    truth = synthetic_truth(scenario, seed)
    ids = sample_ids(scenario.n)
    label = scenario.scenario.value

    omic = _omic_block("omic", ids, truth.z1, scenario, stream(seed, "synth", label, "omic"))
    wsi_factor = None if scenario.scenario is Scenario.MODALITY_DOMINANCE else truth.z2
    wsi = _patch_block(ids, wsi_factor, scenario, stream(seed, "synth", label, "wsi"))
    blocks = [omic, wsi]
    if scenario.scenario is Scenario.NOISE_MODALITY:
        blocks.append(_omic_block("noise", ids, None, scenario, stream(seed, "synth", label, "noise")))

    censor_rng = stream(seed, "synth", label, "censor")
    censored = censor_rng.random(scenario.n) < scenario.censor_rate
    cut = censor_rng.uniform(0.0, 1.0, scenario.n)
    months = np.where(censored, cut * truth.event_months, truth.event_months)
    records = [
        SurvivalRecord(sample_id, float(m), int(c)) for sample_id, m, c in zip(ids, months, censored)
    ]
    logger.info(
        "synthesized %s: n=%d, %.1f%% censored, %d wsi sample(s) absent",
        label,
        scenario.n,
        100.0 * censored.mean() if scenario.n else 0.0,
        int((~wsi.present).sum()),
    )
    return MultiModalDataset(
        sample_ids=ids,
        modalities=blocks,
        records=records,
        provenance=Provenance("synthetic", scenario=label, seed=seed),
    )
