"""Batch command-line frontend.

Subcommands: decompose, schedule, generate, evaluate, optimize, sweep.
Every run is deterministic given its flags; all randomness comes from the
explicit --weight-seed / --noise-seed flags and outputs carry no timestamps.
Exit codes: 0 success, 1 usage error (bad flags, missing files), 2 runtime
error.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import isotonic, pnm
from .metric import (
    HashAlignmentScorer,
    Lambdas,
    background_similarity,
    build_report,
    jer,
    validity_ratio,
)
from .pipeline import PipelineConfig, generate_and_score, init_pipeline, sample, sample_single_prompt, auto_masks
from .pnm import quantize
from .prompt_io import PromptBundle, decompose, endpoint_from_env
from .schedule import (
    ScheduleFamily,
    ThetaSchedule,
    make_schedule,
    read_schedule_csv,
    write_schedule_csv,
)

__all__ = ["main", "run", "entrypoint"]


def _load_bundle(path: str) -> PromptBundle:
    return PromptBundle.from_dict(json.loads(Path(path).read_text()))


def _pipeline_options(fn):
    for opt in reversed(
        [
            click.option("--d-model", default=16, show_default=True),
            click.option("--text-tokens", default=8, show_default=True),
            click.option("--grid-side", default=8, show_default=True),
            click.option("--double-blocks", default=2, show_default=True),
            click.option("--single-blocks", default=2, show_default=True),
            click.option("--steps", default=10, show_default=True),
            click.option("--weight-seed", default=0, show_default=True),
            click.option("--noise-seed", default=0, show_default=True),
        ]
    ):
        fn = opt(fn)
    return fn


def _config(kw) -> PipelineConfig:
    return PipelineConfig(
        d_model=kw["d_model"],
        text_tokens=kw["text_tokens"],
        grid_side=kw["grid_side"],
        double_blocks=kw["double_blocks"],
        single_blocks=kw["single_blocks"],
        steps=kw["steps"],
        weight_seed=kw["weight_seed"],
        noise_seed=kw["noise_seed"],
    )


def _parse_centers(spec: str) -> list[float]:
    """'3..12' expands to integer centers; otherwise a comma-separated list."""
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return [float(c) for c in range(int(lo), int(hi) + 1)]
    return [float(tok) for tok in spec.split(",") if tok.strip()]


@click.group()
def main():
    """Coupled image generation toolkit."""


@main.command("decompose")
@click.option("--prompts", "prompts_path", required=True, help="Text file, one prompt per line.")
@click.option("--fixture", default=None, help="Canned LLM reply file (offline mode).")
@click.option("--out", "out_path", required=True, help="Bundle JSON output path.")
def decompose_cmd(prompts_path, fixture, out_path):
    """Split prompts into a shared background and per-prompt entities."""
    prompts = [ln.strip() for ln in Path(prompts_path).read_text().splitlines() if ln.strip()]
    endpoint = fixture if fixture is not None else endpoint_from_env()
    bundle = decompose(prompts, endpoint)
    Path(out_path).write_text(bundle.to_json() + "\n")
    click.echo(f"wrote {out_path}")


@main.command("schedule")
@click.option("--family", type=click.Choice(["step01", "arctan", "sin"]), required=True)
@click.option("--center", type=float, required=True)
@click.option("--scale", type=float, default=1.0, show_default=True)
@click.option("--steps", type=int, default=50, show_default=True)
@click.option("--out", "out_path", required=True)
def schedule_cmd(family, center, scale, steps, out_path):
    """Write a theta schedule CSV for a parameterized family."""
    sched = make_schedule(ScheduleFamily(kind=family, center=center, scale=scale), steps)
    write_schedule_csv(out_path, sched)
    click.echo(f"wrote {out_path}")


@main.command("generate")
@click.option("--bundle", "bundle_path", required=True)
@click.option("--schedule", "schedule_path", required=True)
@click.option("--out-dir", required=True)
@click.option("--separate-noise", is_flag=True, help="Use a distinct noise stream per entity.")
@click.option("--dump-latents", is_flag=True, help="Write per-step image latents as .f32t files.")
@_pipeline_options
def generate_cmd(bundle_path, schedule_path, out_dir, separate_noise, dump_latents, **kw):
    """Render per-entity images (PGM) plus auto-threshold masks."""
    bundle = _load_bundle(bundle_path)
    sched = read_schedule_csv(schedule_path)
    cfg = _config(kw)
    pipeline = init_pipeline(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    latent_log = [] if dump_latents else None
    images = [
        quantize(img)
        for img in sample(
            pipeline, bundle, sched, shared_noise=not separate_noise, latent_log=latent_log
        )
    ]
    if dump_latents:
        from .numerics import save_f32t

        for j, steps_log in enumerate(latent_log, start=1):
            for i, latent in enumerate(steps_log, start=1):
                save_f32t(out / f"latent_e{j}_s{i:03d}.f32t", latent)
    background_image = quantize(sample_single_prompt(pipeline, bundle.background))
    masks = auto_masks(images, background_image)
    pnm.write_pgm(out / "background.pgm", background_image)
    for j, (img, mask) in enumerate(zip(images, masks), start=1):
        pnm.write_pgm(out / f"entity_{j}.pgm", img)
        pnm.write_mask(out / f"mask_{j}.pgm", mask)
    click.echo(f"wrote {len(images)} images to {out}")


@main.command("evaluate")
@click.option("--image", "image_paths", multiple=True, required=True)
@click.option("--mask", "mask_paths", multiple=True, required=True)
@click.option("--bundle", "bundle_path", required=True, help="Bundle JSON for alignment scoring.")
@click.option("--lambda-bg", default=300.0, show_default=True)
@click.option("--lambda-ti", default=1.0 / 30.0, show_default=True)
@click.option("--out", "out_path", required=True)
def evaluate_cmd(image_paths, mask_paths, bundle_path, lambda_bg, lambda_ti, out_path):
    """Score images + masks and write the metric report JSON."""
    if len(image_paths) != len(mask_paths):
        raise click.UsageError("need one --mask per --image")
    bundle = _load_bundle(bundle_path)
    if len(image_paths) != len(bundle.entities):
        raise click.UsageError(
            f"bundle has {len(bundle.entities)} entities but {len(image_paths)} images given"
        )
    images = [pnm.read_pgm(p) for p in image_paths]
    masks = [pnm.read_mask(p) for p in mask_paths]
    union = jer(masks)
    ratio = validity_ratio(union)
    f_bg = background_similarity(images, union)
    scorer = HashAlignmentScorer({text: text for text in bundle.entities})
    f_ti = [scorer.score(text, img) for text, img in zip(bundle.entities, images)]
    report = build_report(f_bg, f_ti, ratio, Lambdas(lambda_bg, lambda_ti))
    Path(out_path).write_text(report.to_json() + "\n")
    click.echo(f"wrote {out_path}")


@main.command("optimize")
@click.option("--bundle", "bundle_path", required=True)
@click.option("--max-evals", default=200, show_default=True)
@click.option("--step-size", default=0.25, show_default=True)
@click.option("--search-seed", default=0, show_default=True)
@click.option("--out-dir", required=True)
@_pipeline_options
def optimize_cmd(bundle_path, max_evals, step_size, search_seed, out_dir, **kw):
    """Pattern-search the schedule against the combined metric."""
    bundle = _load_bundle(bundle_path)
    cfg = _config(kw)
    pipeline = init_pipeline(cfg)
    out = Path(out_dir)
    trace_dir = out / "trace"
    trace_dir.mkdir(parents=True, exist_ok=True)

    objective = isotonic.CountingObjective(
        lambda sched: generate_and_score(pipeline, bundle, sched).f_c
    )
    init = make_schedule(
        ScheduleFamily(kind="arctan", center=cfg.steps / 5.0, scale=0.5), cfg.steps
    )
    search = isotonic.SearchConfig(
        max_evals=max_evals, init=init, step=step_size, seed=search_seed
    )
    best, value, trace = isotonic.coordinate_search(search, objective)

    write_schedule_csv(out / "best_schedule.csv", best)
    schedule_paths = []
    for entry in trace:
        path = trace_dir / f"eval_{entry.eval_index:05d}.csv"
        write_schedule_csv(path, entry.schedule)
        schedule_paths.append(str(path))
    isotonic.write_trace_csv(out / "trace.csv", trace, schedule_paths)
    click.echo(f"best value {value:.6g} after {objective.count} evaluations")


@main.command("sweep")
@click.option("--family", type=click.Choice(["step01", "arctan", "sin"]), required=True)
@click.option("--centers", required=True, help="Comma list or 'lo..hi' integer range.")
@click.option("--scale", type=float, default=1.0, show_default=True)
@click.option("--bundle", "bundle_path", required=True)
@click.option("--noise-seeds", default=1, show_default=True, help="Noise seeds averaged per point.")
@click.option("--out", "out_path", required=True)
@_pipeline_options
def sweep_cmd(family, centers, scale, bundle_path, noise_seeds, out_path, **kw):
    """Evaluate a grid of schedule centers and tabulate the metrics."""
    bundle = _load_bundle(bundle_path)
    cfg = _config(kw)
    pipeline = init_pipeline(cfg)
    rows = []
    for center in _parse_centers(centers):
        sched = make_schedule(ScheduleFamily(kind=family, center=center, scale=scale), cfg.steps)
        reports = [
            generate_and_score(pipeline, bundle, sched, noise_seed=cfg.noise_seed + s)
            for s in range(noise_seeds)
        ]
        rows.append(
            {
                "family": family,
                "center": center,
                "scale": scale,
                "f_bg": float(np.mean([r.f_bg for r in reports])),
                "f_ti_mean": float(np.mean([np.mean(r.f_ti) for r in reports])),
                "f_c": float(np.mean([r.f_c for r in reports])),
            }
        )
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["family", "center", "scale", "f_bg", "f_ti_mean", "f_c"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    click.echo(f"wrote {out_path}")


def run(argv) -> int:
    """Dispatch argv and map outcomes to exit codes (0 ok, 1 usage, 2 runtime)."""
    try:
        main.main(args=list(argv), standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except FileNotFoundError as exc:
        click.echo(f"usage error: missing file: {exc}", err=True)
        return 1
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        click.echo(f"runtime error: {exc}", err=True)
        return 2
    return 0


def entrypoint() -> None:
    sys.exit(run(sys.argv[1:]))
