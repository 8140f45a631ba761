"""Command-line client: batch generation, metric evaluation, and the service.

`generate` and `evaluate` drive the core pipeline in-process so batch runs
work headless with proper exit codes and resumable artifacts; `serve` exposes
the same pipeline over HTTP for the interactive UI.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backends import BACKEND_NAMES
from .images import load_image
from .inversion import InversionConfig
from .metrics import RandomProjectionExtractor, evaluation_report, format_report_text
from .pipeline import (
    evaluate_project,
    extract_project_poses,
    generate_project,
    invert_project,
    load_sequence,
    make_runtime,
)
from .store import ProjectStore
from .tree import SCHEMES, GenerationConfig

SCHEME_FLAGS = tuple(s.replace("_", "-") for s in SCHEMES)


def parse_motion(spec: str | None) -> dict | None:
    if spec is None:
        return None
    kind, _, rest = spec.partition(":")
    try:
        if kind == "zoom":
            return {"kind": "zoom", "factor": float(rest)}
        if kind == "translate":
            dx, dy = rest.split(",")
            return {"kind": "translate", "dx": float(dx), "dy": float(dy)}
    except ValueError:
        pass
    raise click.BadParameter(f"expected zoom:<factor> or translate:<dx,dy>, got {spec!r}")


@click.group()
def main():
    """Interpolate between two real images with a latent diffusion backend."""


@main.command()
@click.option("--image-a", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--image-b", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Project directory to create or resume.")
@click.option("--frames", default=8, show_default=True, help="Last frame index N; outputs N+1 frames.")
@click.option("--scheme", type=click.Choice(SCHEME_FLAGS), default="ours", show_default=True)
@click.option("--t-min", default=0.25, show_default=True, help="Shallow end of the noise window.")
@click.option("--t-max", default=0.65, show_default=True, help="Deep end of the noise window.")
@click.option("--steps", default=1000, show_default=True, help="Diffusion schedule steps (>= 200).")
@click.option("--substeps", default=25, show_default=True, help="DDIM substeps per denoising segment.")
@click.option("--candidates", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--prompt", default="", help="Initial text prompt shared by both inputs.")
@click.option("--negative-prompt", default="")
@click.option("--pose/--no-pose", "use_pose", default=True, show_default=True)
@click.option("--backend", type=click.Choice(BACKEND_NAMES), default="toy", show_default=True)
@click.option("--motion", default=None, help="zoom:<factor> or translate:<dx,dy>")
@click.option("--weights", default=None,
              help="Non-uniform interpolation schedule: comma list of N+1 increasing weights.")
@click.option("--image-size", default=32, show_default=True, help="Working resolution (square).")
@click.option("--invert/--no-invert", default=True, show_default=True,
              help="Adapt prompt embeddings to the inputs before generating.")
@click.option("--invert-iterations", default=100, show_default=True)
@click.option("--guidance", default=7.5, show_default=True)
def generate(image_a, image_b, out, frames, scheme, t_min, t_max, steps, substeps,
             candidates, seed, prompt, negative_prompt, use_pose, backend, motion,
             weights, image_size, invert, invert_iterations, guidance):
    """Generate an interpolation sequence into a project directory.

    An existing project directory is resumed: its stored config overrides the
    flags, and finalized nodes are never regenerated.
    """
    out = Path(out)
    store = ProjectStore(out.parent if out.parent != Path("") else Path("."))
    scheme = scheme.replace("-", "_")

    if store.exists(out.name):
        project = store.load(out.name)
        click.echo(f"resuming project {project.id} (stored config overrides flags)")
    else:
        weight_tuple = None
        if weights is not None:
            weight_tuple = tuple(float(w) for w in weights.split(","))
        config = GenerationConfig(
            scheme=scheme,
            num_frames=frames,
            t_min_frac=t_min,
            t_max_frac=t_max,
            num_candidates=candidates,
            global_seed=seed,
            substeps=substeps,
            num_steps=steps,
            guidance_scale=guidance,
            use_pose=use_pose,
            interpolation_weights=weight_tuple,
            motion=parse_motion(motion),
        )
        try:
            config.validate()
        except ValueError as exc:
            raise click.ClickException(f"invalid config: {exc}")
        try:
            img_a = load_image(image_a, (image_size, image_size))
            img_b = load_image(image_b, (image_size, image_size))
        except OSError as exc:
            raise click.ClickException(f"cannot read inputs: {exc}")
        project = store.create(
            img_a,
            img_b,
            project_id=out.name,
            backend_name=backend,
            image_size=(image_size, image_size),
            prompt=prompt,
            negative_prompt=negative_prompt,
            config=config,
            inversion=InversionConfig(iterations=invert_iterations) if invert else None,
        )
        click.echo(f"created project {project.id}")

    def bar(label):
        def update(fraction):
            click.echo(f"\r{label}: {fraction * 100:5.1f}%", nl=False)

        return update

    try:
        schedule, backend_obj = make_runtime(project)
        needs_conditioning = project.config.scheme != "interpolate_only"
        if (
            needs_conditioning
            and project.inversion is not None
            and project.inversion.iterations > 0
            and not project.embeddings
            and backend_obj.caps.supports_grad_wrt_embedding
        ):
            invert_project(store, project, progress=bar("inverting"))
            click.echo()
        if needs_conditioning and project.config.use_pose and not project.poses:
            found = extract_project_poses(store, project)
            click.echo(f"poses: {found or 'none detected (continuing unconditioned)'}")
        seq = generate_project(store, project, progress=bar("generating"))
        click.echo()
        try:
            evaluate_project(store, project)
        except ValueError as exc:
            # e.g. too few interior frames to sample FID outputs from
            store.save_report(project, {"skipped": str(exc)})
    except Exception as exc:
        click.echo(f"\ngeneration failed: {exc}", err=True)
        click.echo("partial outputs retained; rerun with the same --out to resume", err=True)
        sys.exit(1)
    click.echo(f"wrote {sum(f is not None for f in seq.frames)} frames to {store.path(project)}")


@main.command()
@click.argument("project_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the machine-readable report here (JSON).")
@click.option("--feature-dim", default=16, show_default=True)
@click.option("--seed", default=0, show_default=True)
def evaluate(project_dirs, out, feature_dim, seed):
    """Compare completed projects: one FID/PPL row per scheme."""
    per_scheme: dict[str, list] = {}
    incomplete = []
    for path in project_dirs:
        path = Path(path)
        store = ProjectStore(path.parent if path.parent != Path("") else Path("."))
        try:
            project = store.load(path.name)
        except FileNotFoundError:
            raise click.ClickException(f"{path} is not a project directory")
        seq = load_sequence(store, project)
        if not seq.complete:
            incomplete.append(str(path))
            continue
        per_scheme.setdefault(project.config.scheme, []).append(seq)
    if incomplete:
        raise click.ClickException(
            "incomplete projects (generate them first): " + ", ".join(incomplete)
        )
    report = evaluation_report(
        per_scheme, RandomProjectionExtractor(dim=feature_dim), seed=seed
    )
    click.echo(format_report_text(report))
    if out is not None:
        Path(out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        click.echo(f"report written to {out}")


@main.command()
@click.option("--root", type=click.Path(file_okay=False), default="projects", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--backend", type=click.Choice(BACKEND_NAMES), default="toy", show_default=True)
@click.option("--image-size", default=32, show_default=True)
@click.option("--frontend", type=click.Path(file_okay=False), default=None,
              help="Static UI bundle to serve at /.")
def serve(root, host, port, backend, image_size, frontend):
    """Run the HTTP service that drives generation jobs and the web UI."""
    import uvicorn

    from .service import create_app

    app = create_app(
        root, backend_name=backend, image_size=(image_size, image_size),
        frontend_dist=frontend,
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
