"""CLI entry point for the MLZ integrability toolkit."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from config import LOG_LEVEL, OUTPUT_DIR, THREADS, VALID_KINDS, validate_config, validate_scenario

app = typer.Typer(
    name="mlz",
    help="Multistate Landau–Zener scattering, integrability checks and semiclassical estimates.",
    add_completion=False,
)
console = Console()


def _setup_logging(verbose: int) -> None:
    level = {0: LOG_LEVEL, 1: "INFO"}.get(verbose, "DEBUG")
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False, markup=False)],
        force=True,
    )


def _load(scenario_path: Path, overrides: list[str]) -> dict:
    from runner.workflow import apply_overrides, load_scenario

    try:
        return apply_overrides(load_scenario(scenario_path), overrides)
    except (OSError, ValueError) as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=1)


@app.command()
def run(
    scenario_path: Path = typer.Argument(..., exists=True, dir_okay=False, help="Scenario JSON file."),
    out_dir: Path = typer.Option(Path(OUTPUT_DIR), "--out-dir", "-o", help="Directory for CSV and manifest."),
    threads: int = typer.Option(THREADS, "--threads", "-j", min=1, help="Worker threads for sweep points."),
    override: list[str] = typer.Option(
        [], "--override", "-O", help="Dotted key=value override (JSON values), repeatable.", show_default=False
    ),
    verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="-v for info, -vv for debug logs."),
):
    """Run one scenario and write its CSV and manifest."""
    _setup_logging(verbose)

    # ── Config validation ──────────────────────────────────────────────────
    problems = validate_config()
    if problems:
        console.print(f"[red]Error:[/red] {'; '.join(problems)}")
        raise typer.Exit(code=1)

    scenario = _load(scenario_path, override)
    kind = scenario.get("kind") if isinstance(scenario, dict) else None

    from runner.executor import error_payload, exit_code_for

    errors = validate_scenario(scenario)
    if errors:
        console.print(error_payload(ValueError("scenario failed validation"), kind, errors), highlight=False, markup=False)
        raise typer.Exit(code=1)

    console.print()
    console.print(
        Panel.fit(
            f"[bold]{kind}[/bold]: {scenario.get('name', scenario_path.stem)}\n"
            f"[dim]Threads: {threads} | Output: {out_dir}[/dim]",
            title="[bold blue]MLZ run[/bold blue]",
            border_style="blue",
        )
    )

    # ── Deferred import keeps `mlz --help` fast ─────────────────────────────
    from runner.workflow import run_scenario

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        TimeElapsedColumn(),
        console=console,
        transient=False,
    ) as progress:
        task = progress.add_task(f"Running {kind}...", total=None)
        try:
            outcome = run_scenario(scenario, out_dir, threads=threads)
        except Exception as e:
            progress.update(task, description=f"[red]Failed: {type(e).__name__}[/red]")
            console.print(error_payload(e, kind), highlight=False, markup=False)
            raise typer.Exit(code=exit_code_for(e))
        progress.update(task, description=f"{kind} complete")

    manifest = outcome.manifest
    table = Table(title=f"{kind} ({manifest['rows']} rows)")
    for col in outcome.frame.columns:
        table.add_column(str(col))
    for _, row in outcome.frame.head(20).iterrows():
        table.add_row(*(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    console.print(table)

    border = "green" if manifest["all_converged"] else "yellow"
    status = "all rows converged" if manifest["all_converged"] else "some rows flagged as not converged"
    console.print(Panel.fit(f"[bold]{status}[/bold]\nwall time {manifest['wall_time_sec']:.2f}s", border_style=border))
    console.print(f"[green]CSV saved to:[/green] {outcome.csv_path}")
    console.print(f"[green]Manifest saved to:[/green] {outcome.manifest_path}")


@app.command()
def validate(
    scenario_path: Path = typer.Argument(..., exists=True, dir_okay=False, help="Scenario JSON file."),
    override: list[str] = typer.Option([], "--override", "-O", help="Dotted key=value override.", show_default=False),
):
    """Check a scenario without computing anything."""
    scenario = _load(scenario_path, override)
    errors = validate_scenario(scenario)
    if errors:
        console.print(f"[red]Invalid scenario[/red] ({len(errors)} problem(s)):")
        for err in errors:
            console.print(f"  [yellow]• {err}[/yellow]", highlight=False)
        console.print(json.dumps({"valid": False, "errors": errors}, ensure_ascii=False), highlight=False, markup=False)
        raise typer.Exit(code=1)
    console.print(f"[green]Valid[/green] {scenario['kind']} scenario (kinds: {', '.join(VALID_KINDS)})")


if __name__ == "__main__":
    app()
