import click
from rich.table import Table

from healnet.extensions import console
from healnet.services.gradcheck_service import EPS, SEEDS, TOLERANCE, run_suite
from healnet.utils.errors import NumericalError


@click.command("gradcheck")
@click.option("--seeds", type=click.IntRange(min=1), default=len(SEEDS), show_default=True)
@click.option(
    "--eps", type=click.FloatRange(min=0.0, min_open=True), default=EPS, show_default=True, help="Finite-difference step."
)
@click.option(
    "--tolerance",
    type=click.FloatRange(min=0.0, min_open=True),
    default=TOLERANCE,
    show_default=True,
    help="Bound on |a - n| / max(|a|, |n|, 1), an absolute error for gradients below 1.",
)
def gradcheck(seeds, eps, tolerance):
    """
    Compare backward() with central finite differences for every op, the losses, cross-attention and the full model.

    **Exit codes:**
    - 0: every check below tolerance
    - 3: at least one check failed
    """
    results = run_suite(seeds=range(seeds), eps=eps, tolerance=tolerance)
    table = Table(title=f"Gradient checks ({seeds} seeds, eps={eps:g})")
    table.add_column("check")
    table.add_column("max rel. error", justify="right")
    table.add_column("result")
    for result in results:
        verdict = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.name, f"{result.max_error:.2e}", verdict)
    console.print(table)

    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalError(f"{len(failed)} gradient check(s) above {tolerance:g}", failed)
    return results
