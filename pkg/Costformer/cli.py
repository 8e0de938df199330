"""Command-line interface: ``costformer <command>``."""

from __future__ import annotations

import dataclasses
import functools
import logging
import pathlib
from collections.abc import Callable
from typing import Any

import click

from Costformer import configure_logging, create_model
from Costformer.app import Costformer
from Costformer.errors import CostformerError
from Costformer.pipeline.bench import bench_attention, write_report
from Costformer.pipeline.checkpoint import load_checkpoint, save_checkpoint
from Costformer.pipeline.config import (
    Config,
    default_seed,
    dump_config,
    load_config,
)
from Costformer.pipeline.depth_io import write_depth_preview, write_pfm
from Costformer.pipeline.scene import (
    SyntheticScene,
    generate_scenes,
    load_scene,
    save_scene,
)
from Costformer.pipeline.selftest import (
    GRADIENT_COMPONENTS,
    gradient_suite,
    gradient_tolerance,
    run_selftest,
)
from Costformer.pipeline.train import train as train_model

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class RunContext:
    """Options shared by every command."""

    config: Config
    seed: int


def _guarded(command: Callable[..., Any]) -> Callable[..., Any]:
    """Turn package errors into a clean non-zero exit."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except CostformerError as error:
            logger.exception("%s failed: %s", command.__name__, error)
            raise click.ClickException(str(error)) from error

    return wrapper


def _scenes(
    run: RunContext, directories: tuple[pathlib.Path, ...]
) -> list[SyntheticScene]:
    """Load the given scene directories, or synthesize from the config."""
    if directories:
        return [load_scene(directory) for directory in directories]
    return generate_scenes(run.config.scene, run.seed)


@click.group(invoke_without_command=True)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=pathlib.Path),
    default=None,
    help="TOML file merged onto the defaults.",
)
@click.option(
    "--seed", type=int, default=None, help="Seed (env COSTFORMER_SEED)."
)
@click.option("--verbose", is_flag=True, help="Log at DEBUG level.")
@click.option(
    "--print-config", is_flag=True, help="Print the effective config and exit."
)
@click.pass_context
@_guarded
def main(
    ctx: click.Context,
    config_path: pathlib.Path | None,
    seed: int | None,
    verbose: bool,
    print_config: bool,
) -> None:
    """Cost-aggregation transformers for multi-view stereo."""
    configure_logging(verbose)
    config = load_config(config_path)
    if print_config:
        click.echo(dump_config(config), nl=False)
        ctx.exit()
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit()
    ctx.obj = RunContext(config, default_seed() if seed is None else seed)


@main.command()
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    required=True,
    help="Directory receiving scene_XX folders.",
)
@click.pass_obj
@_guarded
def synth(run: RunContext, out: pathlib.Path) -> None:
    """Render synthetic slanted-plane scenes."""
    for index, scene in enumerate(generate_scenes(run.config.scene, run.seed)):
        save_scene(scene, out / f"scene_{index:02d}")
    click.echo(f"wrote {run.config.scene.scenes} scene(s) to {out}")


@main.command()
@click.option(
    "--scene",
    "scene_dirs",
    type=click.Path(file_okay=False, exists=True, path_type=pathlib.Path),
    multiple=True,
    help="Scene directory; repeatable. Defaults to synthesized scenes.",
)
@click.option(
    "--out",
    type=click.Path(dir_okay=False, path_type=pathlib.Path),
    default=pathlib.Path("costformer.ckpt"),
    show_default=True,
    help="Checkpoint file to write.",
)
@click.option("--steps", type=int, default=None, help="Override train.steps.")
@click.option("--ablate", is_flag=True, help="Switch RDACT and RRT off.")
@click.pass_obj
@_guarded
def train(
    run: RunContext,
    scene_dirs: tuple[pathlib.Path, ...],
    out: pathlib.Path,
    steps: int | None,
    ablate: bool,
) -> None:
    """Train on scenes and save a checkpoint."""
    config = run.config
    if steps is not None:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, steps=steps)
        )
    if ablate:
        config = dataclasses.replace(config, model=config.model.ablated())
    result = train_model(_scenes(run, scene_dirs), config, run.seed)
    save_checkpoint(out, result.checkpoint)
    if result.losses:
        click.echo(
            f"loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f} "
            f"over {len(result.losses)} steps"
        )
    click.echo(f"checkpoint written to {out}")


@main.command()
@click.option(
    "--checkpoint",
    type=click.Path(dir_okay=False, exists=True, path_type=pathlib.Path),
    default=None,
    help="Trained checkpoint; omitted means freshly initialized.",
)
@click.option(
    "--scene",
    "scene_dir",
    type=click.Path(file_okay=False, exists=True, path_type=pathlib.Path),
    default=None,
    help="Scene directory. Defaults to the first synthesized scene.",
)
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    required=True,
    help="Directory receiving depth maps.",
)
@click.pass_obj
@_guarded
def infer(
    run: RunContext,
    checkpoint: pathlib.Path | None,
    scene_dir: pathlib.Path | None,
    out: pathlib.Path,
) -> None:
    """Estimate depth and write per-stage PFMs plus a PNG preview."""
    if checkpoint is None:
        model = create_model(run.config, run.seed)
    else:
        model = Costformer.from_checkpoint(load_checkpoint(checkpoint))
    scene = _scenes(run, (scene_dir,) if scene_dir else ())[0]
    output = model.forward(scene)
    out.mkdir(parents=True, exist_ok=True)
    for stage, result in zip(model.config.stages, output.stages, strict=True):
        write_pfm(out / f"depth_stage{stage.index}.pfm", result.depth.numpy())
    final = output.depth.numpy()
    write_pfm(out / "depth.pfm", final)
    write_depth_preview(out / "depth.png", final, scene.d_min, scene.d_max)
    depth = getattr(scene, "depth", None)
    if depth is not None:
        metrics = model.evaluate(scene, depth, output)
        click.echo(
            ";".join(f"{name}={value:.6g}" for name, value in metrics.items())
        )
    click.echo(f"depth maps written to {out}")


@main.command()
@click.argument(
    "component", type=click.Choice([*GRADIENT_COMPONENTS, "all"]), default="all"
)
@click.pass_obj
@_guarded
def gradcheck(run: RunContext, component: str) -> None:
    """Compare tape gradients with central finite differences."""
    names = GRADIENT_COMPONENTS if component == "all" else (component,)
    failed = False
    click.echo("check;max_abs_error;max_rel_error;elements;passed")
    for name in names:
        tolerance = gradient_tolerance(name)
        for label, report in gradient_suite(name, run.seed).items():
            passed = report.passed(tolerance)
            failed |= not passed
            click.echo(
                f"{label};{report.max_abs_error:.3e};"
                f"{report.max_rel_error:.3e};{report.num_elements};{passed}"
            )
    if failed:
        raise click.ClickException("gradient check failed")


@main.command()
@click.option(
    "--sizes",
    default="32,64,96,128",
    show_default=True,
    help="Comma-separated spatial extents.",
)
@click.option(
    "--window", default="7,7,2", show_default=True, help="Window h,w,d."
)
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option(
    "--report",
    type=click.Path(dir_okay=False, path_type=pathlib.Path),
    default=pathlib.Path("bench.json"),
    show_default=True,
    help="JSON report file.",
)
@click.pass_obj
@_guarded
def bench(
    run: RunContext, sizes: str, window: str, repeats: int, report: pathlib.Path
) -> None:
    """Time windowed against global attention."""
    try:
        parsed_sizes = [int(size) for size in sizes.split(",")]
        parsed_window = tuple(int(extent) for extent in window.split(","))
    except ValueError as error:
        raise click.BadParameter(str(error)) from error
    result = bench_attention(
        parsed_sizes, parsed_window, seed=run.seed, repeats=repeats
    )
    click.echo(result.table())
    write_report(result, report)


@main.command()
@click.option("--full", is_flag=True, help="Also run the training comparison.")
@click.pass_obj
@_guarded
def selftest(run: RunContext, full: bool) -> None:
    """Run the acceptance checks."""
    results = run_selftest(run.config, run.seed, full=full)
    click.echo("check;passed;detail")
    for result in results:
        click.echo(f"{result.name};{result.passed};{result.detail}")
    failures = [result.name for result in results if not result.passed]
    if failures:
        raise click.ClickException(f"failed: {', '.join(failures)}")
