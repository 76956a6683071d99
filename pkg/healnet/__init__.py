import click

from .config import Config
from .extensions import err_console, init_logging
from .utils.errors import HealNetError

USAGE_EXIT = 1


class HealNetGroup(click.Group):
    """Maps raised errors to exit codes: 1 usage/config, 2 data, 3 numerical."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except HealNetError as e:
            err_console.print(f"[bold red]error:[/bold red] {e}", highlight=False)
            ctx.exit(e.exit_code)
        except click.UsageError as e:
            e.show()
            ctx.exit(USAGE_EXIT)


def create_cli():
    from .commands import eval_missing, gradcheck, inspect, synth, train

    @click.group(cls=HealNetGroup)
    @click.option(
        "--log-level",
        type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
        default=Config.LOG_LEVEL.upper(),
        show_default=True,
        help="Defaults to HEALNET_LOG_LEVEL.",
    )
    def cli(log_level):
        """Hybrid early-fusion survival models over a shared latent array."""
        init_logging(log_level)

    #  Register commands
    cli.add_command(synth)
    cli.add_command(train)
    cli.add_command(eval_missing)
    cli.add_command(inspect)
    cli.add_command(gradcheck)

    return cli
