from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import numpy as np
import typer

from transamba import __version__
from transamba.core.config import ExperimentConfig, Variant, load_config
from transamba.core.errors import ConfigError, DataError, NumericalError
from transamba.utils.ui import epoch_progress, print_table, toast

app = typer.Typer(
    help="TranSamba CLI - hybrid Transformer/SSM encoder for weakly supervised volumetric localization"
)

REFERENCE_SCALE = dict(B=256, M=196, N=16, D=384)

ConfigOption = typer.Option(None, "--config", "-c", help="key=value experiment config file")
SeedOption = typer.Option(None, "--seed", "-s", help="Seed (overrides the config's seed)")
OutOption = typer.Option(Path("runs"), "--out", "-o", help="Output directory")
OverrideOption = typer.Option(None, "--override", help="k=v applied after the config file (repeatable)")


@contextmanager
def _command_errors():
    """Map domain errors onto exit codes 2 (config), 3 (data) and 4 (numerical)."""
    try:
        yield
    except typer.Exit:
        raise
    except (ConfigError, DataError, NumericalError) as e:
        toast(f"{type(e).__name__}: {e}", "error")
        raise typer.Exit(e.exit_code)


def _load(config: Optional[Path], seed: Optional[int], overrides: Optional[List[str]]) -> ExperimentConfig:
    cfg = load_config(config, overrides or [])
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    return cfg


def _dataset_dir(path: Path, split: str) -> Path:
    # accept either a split directory or the directory `gen` wrote
    return path / split if (path / split / "dataset.json").exists() else path


@app.command()
def gen(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    override: Optional[List[str]] = OverrideOption,
):
    """Generate a seeded synthetic train/test dataset."""
    from transamba.data.synthetic import generate
    from transamba.data.volume_io import DatasetInfo, write_dataset
    from transamba.manager.experiment import ExperimentManager

    with _command_errors():
        cfg = _load(config, seed, override)
        d = cfg.data
        manager = ExperimentManager(out)
        train_seq, test_seq = np.random.SeedSequence(cfg.seed).spawn(2)
        params = d.model_dump()
        artifacts: List[Path] = []
        for split, stream, count in (("train", train_seq, d.volumes), ("test", test_seq, d.test_volumes)):
            volumes = generate(
                stream,
                count,
                d.depth,
                d.height,
                d.width,
                d.contrast,
                d.noise_sd,
                base_level=d.base_level,
                radius_range=(d.radius_min, d.radius_max),
                lesions=d.lesions,
                empty_fraction=d.empty_fraction,
                distractors=d.distractors,
            )
            info_fields = {k: v for k, v in params.items() if k not in ("volumes", "test_volumes")}
            info = DatasetInfo(count=count, seed=cfg.seed, split=split, **info_fields)
            artifacts += write_dataset(out / split, volumes, info)
            artifacts.append(out / split / "dataset.json")
        manager.record("gen", cfg.seed, artifacts, params)
        toast(f"Wrote {d.volumes} train and {d.test_volumes} test volumes to {out}", "success")


@app.command()
def train(
    data: Path = typer.Option(..., "--data", "-d", help="Dataset directory (or the directory written by gen)"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    override: Optional[List[str]] = OverrideOption,
):
    """Train the encoder on slice-level labels."""
    from transamba.data.volume_io import read_dataset
    from transamba.manager.experiment import ExperimentManager
    from transamba.manager.trainer import Trainer

    with _command_errors():
        cfg = _load(config, seed, override)
        volumes, _ = read_dataset(_dataset_dir(data, "train"))
        manager = ExperimentManager(out)
        trainer = Trainer(cfg, out)
        with epoch_progress(f"Training {cfg.model.variant.value}", total=cfg.train.epochs) as advance:
            result = trainer.train(volumes, on_epoch=lambda _: advance())
        print_table(
            "Training",
            ["epoch", "loss", "val_accuracy", "lr"],
            [[r.epoch, f"{r.loss:.5f}", f"{r.val_accuracy:.4f}", f"{r.lr:.5f}"] for r in result.epochs],
        )
        manager.record(
            "train",
            cfg.seed,
            [Path(p) for p in result.artifacts],
            {"variant": cfg.model.variant.value, "pos_weight": result.pos_weight, "best_epoch": result.best_epoch},
        )
        toast(f"Best validation accuracy {result.best_accuracy:.4f} at epoch {result.best_epoch}", "success")


@app.command()
def infer(
    run: Path = typer.Option(..., "--run", "-r", help="Training output directory (model.conf + checkpoints)"),
    data: Path = typer.Option(..., "--data", "-d", help="Volumes to localize (or the directory written by gen)"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Checkpoint file (default: the run's best or final, per checkpoint=)"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    override: Optional[List[str]] = OverrideOption,
):
    """Localize every plane of every volume and write masks."""
    from transamba.data.volume_io import read_dataset
    from transamba.manager.experiment import ExperimentManager
    from transamba.manager.inference import load_model, run_inference

    with _command_errors():
        cfg = _load(config, seed, override)
        model, model_cfg = load_model(run, checkpoint, which=cfg.infer.checkpoint)
        volumes, _ = read_dataset(_dataset_dir(data, "test"))
        manager = ExperimentManager(out)
        paths = run_inference(model, model_cfg, volumes, cfg.infer, out)
        manager.record("infer", cfg.seed, paths, {"variant": model_cfg.variant.value, **cfg.infer.model_dump()})
        toast(f"Localized {len(volumes)} volumes into {out}", "success")


@app.command(name="eval")
def eval_cmd(
    pred: Path = typer.Option(..., "--pred", "-p", help="Masks directory (or the directory written by infer)"),
    truth: Path = typer.Option(..., "--truth", "-t", help="Ground-truth dataset (or the directory written by gen)"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    override: Optional[List[str]] = OverrideOption,
):
    """Score predicted masks with DSC, HD95 and 2D IoU."""
    from transamba.manager.experiment import ExperimentManager
    from transamba.manager.inference import MASKS_DIR, run_evaluation

    with _command_errors():
        cfg = _load(config, seed, override)
        pred_dir = pred / MASKS_DIR if (pred / MASKS_DIR).is_dir() else pred
        summary, paths = run_evaluation(pred_dir, _dataset_dir(truth, "test"), out)
        ExperimentManager(out).record("eval", cfg.seed, paths)
        print_table("Metrics", ["metric", "value"], [[k, f"{v:.4f}" if isinstance(v, float) else v] for k, v in summary.items()])


@app.command()
def bench(
    target: Optional[str] = typer.Option(
        None, "--target", help="Variant (V1..V5) or block mode (cross_SSM, cross_SA); default: config variant"
    ),
    memory: bool = typer.Option(True, "--memory/--no-memory", help="Also measure peak tracked bytes"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    override: Optional[List[str]] = OverrideOption,
):
    """Measure forward time and peak memory against planes per volume."""
    from transamba.complexity.bench import BLOCK_TARGETS, bench_memory, bench_time
    from transamba.localize.metrics import write_table
    from transamba.manager.experiment import ExperimentManager

    with _command_errors():
        cfg = _load(config, seed, override)
        b = cfg.bench
        target = target or cfg.model.variant.value
        if target not in BLOCK_TARGETS and target not in {v.value for v in Variant}:
            raise ConfigError(f"unknown bench target {target!r}")
        try:
            timing = bench_time(cfg.model, b.plane_counts, b.trials, b.warmup, b.volumes_per_pass, target, b.pin_cpu)
            mem = bench_memory(cfg.model, b.plane_counts, b.total_planes, target) if memory else None
        except (ConfigError, DataError):
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from e
        rows = []
        for i, point in enumerate(timing.points):
            peak = mem.points[i].peak_bytes if mem else None
            rows.append({"N": point.planes, "time_ns": point.time_ns, "peak_bytes": peak})
        fits = []
        for name, fit in (("time", timing.time_fit), ("memory", mem.memory_fit if mem else None)):
            if fit is not None:
                fits.append(
                    {
                        "series": name,
                        "c0": fit.quadratic[0],
                        "c1": fit.quadratic[1],
                        "c2": fit.quadratic[2],
                        "lin_c0": fit.linear[0],
                        "lin_c1": fit.linear[1],
                        "r2_linear": fit.r2_linear,
                        "r2_quadratic": fit.r2_quadratic,
                        "quadratic_share": fit.quadratic_share,
                    }
                )
        out.mkdir(parents=True, exist_ok=True)
        paths = [write_table(out / "bench.tsv", rows)]
        if fits:
            paths.append(write_table(out / "bench_fit.tsv", fits))
        for row in rows:
            typer.echo("\t".join(str(row[k]) for k in ("N", "time_ns", "peak_bytes")))
        for fit in fits:
            typer.echo("\t".join(["fit"] + [str(v) for v in fit.values()]))
        ExperimentManager(out).record("bench", cfg.seed, paths, {"target": target, **b.model_dump()})


@app.command()
def complexity(
    B: Optional[int] = typer.Option(None, "--B", help="Planes per batch (default: bench total_planes)"),
    M: Optional[int] = typer.Option(None, "--M", help="Patch tokens per plane (default: from the model config)"),
    N: Optional[int] = typer.Option(None, "--N", help="Planes per volume (default: model planes)"),
    D: Optional[int] = typer.Option(None, "--D", help="Embedding width (default: model_dim)"),
    reference_scale: bool = typer.Option(False, "--reference-scale", help="Use B=256, M=196, N=16, D=384"),
    config: Optional[Path] = ConfigOption,
    override: Optional[List[str]] = OverrideOption,
):
    """Print the analytic time/space cost of every modelling mode and variant."""
    from transamba.complexity.counters import MODES, complexity_report, estimate_memory

    with _command_errors():
        cfg = _load(config, None, override)
        dims = dict(REFERENCE_SCALE) if reference_scale else dict(
            B=cfg.bench.total_planes, M=cfg.model.num_patches, N=cfg.model.planes, D=cfg.model.model_dim
        )
        for key, value in (("B", B), ("M", M), ("N", N), ("D", D)):
            if value is not None:
                dims[key] = value
        try:
            reports = [complexity_report(mode, **dims) for mode in MODES]
            estimates = [(v.value, estimate_memory(v, **dims)) for v in Variant]
        except ValueError as e:
            raise ConfigError(str(e)) from e
        print_table(
            f"Cost per layer (B={dims['B']}, M={dims['M']}, N={dims['N']}, D={dims['D']})",
            ["mode", "time", "space"],
            [[r.mode, r.time_total, r.space_total] for r in reports],
        )
        print_table(
            "Analytic activation memory per layer (float32)",
            ["variant", "bytes", "GiB"],
            [[name, value, f"{value / 2**30:.3f}"] for name, value in estimates],
        )


@app.command()
def version():
    """Display the version of the transamba package."""
    typer.echo(f"transamba version: {__version__}")


@app.command()
def info():
    """Welcome message and basic information."""
    typer.echo("🧠 Welcome to the TranSamba CLI!")
    typer.echo("\nCross-plane Mamba + in-plane attention for weakly supervised volumetric localization.")
    typer.echo("\n📋 Available commands:")
    typer.echo("  🧪 gen         - Generate a synthetic train/test dataset")
    typer.echo("  🏋️  train       - Train an encoder variant on slice labels")
    typer.echo("  🔎 infer       - Localize volumes into masks and maps")
    typer.echo("  📏 eval        - Score masks (DSC, HD95, IoU)")
    typer.echo("  ⏱️  bench       - Time/memory scaling in planes per volume")
    typer.echo("  🧮 complexity  - Analytic cost models")
    typer.echo("  📋 version     - Show version information")
    typer.echo("\nFor help with any command, use: transamba <command> --help")
    typer.echo("\n🚀 Get started:")
    typer.echo("  transamba gen --out runs/data --seed 0")
    typer.echo("  transamba train --data runs/data --out runs/v3")
    typer.echo("  transamba infer --run runs/v3 --data runs/data --out runs/v3-infer")
    typer.echo("  transamba eval --pred runs/v3-infer --truth runs/data --out runs/v3-eval")


if __name__ == "__main__":
    app()
