import numpy as np
import pytest
from click.testing import CliRunner

from healnet import create_cli
from healnet.models.dataset import ModalityKind
from healnet.models.fusion import HealNetModel, ModalityBatch, ModalitySpec
from healnet.models.survival_record import SurvivalRecord
from healnet.models.tensor import Tensor
from healnet.schemas import ModelConfig, RunConfig, SynthScenario
from healnet.services.dataset_service import save_data_dir
from healnet.services.synthetic_service import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small enough for exhaustive checks, large enough for two heads."""
    return ModelConfig(
        latent_channels=3,
        latent_dim=8,
        depth=2,
        heads=2,
        dims_per_head=4,
        attn_dropout=0.0,
        ff_dropout=0.0,
    )


@pytest.fixture
def specs():
    return [
        ModalitySpec("omic", ModalityKind.TABULAR, tokens=5, channels=1),
        ModalitySpec("wsi", ModalityKind.PATCHES, tokens=6, channels=3),
    ]


@pytest.fixture
def tiny_model(tiny_config, specs):
    return HealNetModel(tiny_config, specs, num_bins=4, seed=7)


@pytest.fixture
def tiny_batches(rng):
    n = 4
    token_mask = np.ones((n, 6), dtype=bool)
    token_mask[0, 4:] = False
    return [
        ModalityBatch(1, Tensor(rng.normal(size=(n, 5, 1))), present=np.ones(n, dtype=bool)),
        ModalityBatch(
            2,
            Tensor(rng.normal(size=(n, 6, 3))),
            present=np.array([True, True, False, True]),
            token_mask=token_mask,
        ),
    ]


@pytest.fixture
def records():
    times = [5.0, 1.0, 7.0, 3.0, 8.0, 2.0, 6.0, 4.0]
    censored = [0, 0, 1, 0, 0, 1, 0, 0]
    return [SurvivalRecord(f"p{i}", t, c) for i, (t, c) in enumerate(zip(times, censored))]


@pytest.fixture
def small_scenario():
    return SynthScenario(n=60, p=6, t=4, d_x=3, censor_rate=0.2, noise_sigma=0.3)


TINY_RUN = {
    "latent_channels": "3",
    "latent_dim": "8",
    "depth": "1",
    "heads": "2",
    "dims_per_head": "4",
    "epochs": "2",
    "batch_size": "16",
    "folds": "2",
    "seed": "0",
}


@pytest.fixture
def tiny_run_config():
    return RunConfig.from_flat(TINY_RUN)


@pytest.fixture
def tiny_overrides():
    """``TINY_RUN`` as repeated ``--set`` options."""
    return [arg for key, value in TINY_RUN.items() for arg in ("--set", f"{key}={value}")]


@pytest.fixture
def small_dataset(small_scenario):
    return generate_synthetic(small_scenario, seed=3)


@pytest.fixture
def synthetic_dir(tmp_path, small_scenario):
    """A 60-sample synthetic cohort written in the data-directory layout."""
    out = tmp_path / "cohort"
    save_data_dir(generate_synthetic(small_scenario, seed=3), out)
    return out


@pytest.fixture
def cli():
    return create_cli()


@pytest.fixture
def runner():
    return CliRunner(mix_stderr=False)
