import logging

import click

from healnet.extensions import console
from healnet.schemas import Scenario
from healnet.services import generate_synthetic, load_run_config, save_data_dir

logger = logging.getLogger(__name__)


@click.command("synth")
@click.option(
    "--scenario",
    type=click.Choice([s.value for s in Scenario]),
    default=None,
    help="Planted-signal design; defaults to the config value.",
)
@click.option("--n", "n", type=click.IntRange(min=1), default=None, help="Number of samples.")
@click.option("--seed", type=click.IntRange(min=0, max=2**64 - 1), default=None, help="Generator seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Directory to write.")
@click.option("--config", "config", default=None, help="Config file or preset name (e.g. synth).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key.")
def synth(scenario, n, seed, out_dir, config, overrides):
    """
    Write a synthetic cohort: omic.csv, wsi.hpf (+ wsi.ids), survival.csv and dataset.kv.

    Other shape keys (p, t, d_x, censor_rate, noise_sigma, missing_rate,
    signal_features) come from --config or --set.

    **Exit codes:**
    - 0: files written
    - 1: invalid flags or config
    - 2: output directory not writable
    """
    run_config = load_run_config(config, overrides, scenario=scenario, n=n, seed=seed)
    dataset = generate_synthetic(run_config.synth, seed=run_config.train.seed)
    written = save_data_dir(dataset, out_dir)
    for path in written:
        logger.debug("wrote %s", path)
    console.print(
        f"[bold]{run_config.synth.scenario.value}[/bold]: {dataset.n} samples, "
        f"modalities {', '.join(dataset.modality_names)} -> {out_dir}"
    )
