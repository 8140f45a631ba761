"""Project-level orchestration shared by the CLI and the service jobs.

Each function loads what it needs from the store, runs the corresponding
stage, persists artifacts, and saves the project metadata. Nodes whose
fingerprints are already recorded are never regenerated.
"""

from __future__ import annotations

import warnings
from typing import Callable, Optional

import numpy as np

from .backends import Backend, get_backend
from .diffusion import NoiseSchedule, make_schedule
from .generate import (
    ConditioningProvider,
    FrameSequence,
    run_baseline,
    run_digest,
    run_interpolation,
)
from .inversion import InversionConfig, invert_prompt, invert_shared_negative
from .metrics import RandomProjectionExtractor, evaluation_report
from .pose import extract_pose_with_fallback, skeleton_from_json, skeleton_to_json
from .store import Project, ProjectStore, tree_from_dict, tree_to_dict

Progress = Optional[Callable[[float], None]]


def make_runtime(project: Project) -> tuple[NoiseSchedule, Backend]:
    schedule = make_schedule(project.config.num_steps, project.config.schedule_profile)
    backend = get_backend(project.backend_name, schedule, image_size=tuple(project.image_size))
    return schedule, backend


def build_provider(store: ProjectStore, project: Project, backend: Backend) -> ConditioningProvider:
    """Conditioning from stored inversions, poses, and per-node overrides.

    Falls back to plain text encodings when no inversion has been run.
    """
    shape = backend.caps.embedding_shape
    pos_a = store.load_embedding(project, "positive_a", shape)
    pos_b = store.load_embedding(project, "positive_b", shape)
    neg = store.load_embedding(project, "negative", shape)
    if pos_a is None:
        pos_a = pos_b = backend.encode_text(project.prompt)
    if neg is None:
        neg = backend.encode_text(project.negative_prompt)

    def load_skel(key):
        obj = store.load_skeleton(project, key)
        return None if obj is None else skeleton_from_json(obj)

    provider = ConditioningProvider(
        backend,
        positive_a=pos_a,
        positive_b=pos_b,
        negative=neg,
        skeleton_a=load_skel("input_a"),
        skeleton_b=load_skel("input_b"),
        guidance_scale=project.config.guidance_scale,
        use_pose=project.config.use_pose,
    )
    for key, text in project.prompt_overrides.items():
        provider.prompt_overrides[int(key)] = backend.encode_text(text)
    for key, rel in project.poses.items():
        if key.startswith("node_"):
            skel = skeleton_from_json(store.load_skeleton(project, key))
            provider.pose_overrides[int(key.removeprefix("node_"))] = skel
    return provider


def invert_project(store: ProjectStore, project: Project, progress: Progress = None) -> None:
    """Adapt the prompt embeddings to each input (positive per image, negative shared)."""
    cfg = project.inversion or InversionConfig()
    schedule, backend = make_runtime(project)
    if not backend.caps.supports_grad_wrt_embedding:
        raise ValueError(f"backend {project.backend_name!r} cannot optimize embeddings")
    img_a, img_b = store.load_inputs(project)
    z_a, z_b = backend.encode_image(img_a), backend.encode_image(img_b)
    initial_pos = backend.encode_text(project.prompt)
    initial_neg = backend.encode_text(project.negative_prompt)

    total = 3 * max(1, cfg.iterations)

    def stepper(offset):
        def on_step(i, loss):
            if progress is not None:
                progress((offset + i + 1) / total)

        return on_step

    pos_a = invert_prompt(initial_pos, z_a, cfg, backend, schedule, on_step=stepper(0))
    pos_b = invert_prompt(
        initial_pos, z_b, cfg, backend, schedule, on_step=stepper(cfg.iterations)
    )
    neg = invert_shared_negative(
        initial_neg, z_a, z_b, cfg, backend, schedule, on_step=stepper(2 * cfg.iterations)
    )
    store.save_embedding(project, "positive_a", pos_a)
    store.save_embedding(project, "positive_b", pos_b)
    store.save_embedding(project, "negative", neg)
    store.save(project)


def extract_project_poses(store: ProjectStore, project: Project, progress: Progress = None) -> dict:
    """Detect input poses (with the style-translation fallback) and persist them."""
    schedule, backend = make_runtime(project)
    img_a, img_b = store.load_inputs(project)
    found = {}
    for i, (key, img) in enumerate((("input_a", img_a), ("input_b", img_b))):
        skel = extract_pose_with_fallback(
            img, backend, schedule, seed=project.config.global_seed
        )
        if skel is not None:
            store.save_skeleton(project, key, skeleton_to_json(skel))
            found[key] = skel.source
        if progress is not None:
            progress((i + 1) / 2)
    store.save(project)
    return found


def _selections(project: Project) -> dict[int, int]:
    out = {}
    for key, record in project.candidates.items():
        if record.get("selection_source") == "user" and record.get("selected") is not None:
            out[int(key)] = int(record["selected"])
    return out


def generate_project(
    store: ProjectStore,
    project: Project,
    up_to_level: Optional[int] = None,
    progress: Progress = None,
) -> FrameSequence:
    """Run the configured scheme, persisting frames, latents, and candidates."""
    schedule, backend = make_runtime(project)
    provider = build_provider(store, project, backend)
    img_a, img_b = store.load_inputs(project)
    config = project.config

    def on_node(done, total):
        if progress is not None:
            progress(done / total)

    if config.scheme == "ours":
        digest = run_digest(config, provider, project.backend_name)
        seq = run_interpolation(
            img_a,
            img_b,
            config,
            backend,
            schedule,
            provider=provider,
            ranking_prompts=tuple(project.ranking_prompts) if config.num_candidates > 1 else None,
            selections=_selections(project),
            cache=store.node_cache(project),
            base_digest=digest,
            progress=on_node,
            up_to_level=up_to_level,
        )
        project.tree = None if seq.tree is None else tree_to_dict(seq.tree)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            seq = run_baseline(config.scheme, img_a, img_b, config, backend, schedule, provider)
        if progress is not None:
            progress(1.0)
    store.save_frames(project, seq)
    store.save(project)
    return seq


def regenerate_subtree(
    store: ProjectStore, project: Project, node_index: int, progress: Progress = None
) -> dict:
    """Regenerate after a mutation at one node; only its subtree recomputes.

    Fingerprint chaining makes this the same code path as a full run: every
    untouched node is a cache hit.
    """
    generate_project(store, project, progress=progress)
    affected = sorted(tree_from_dict(project.tree).descendants(node_index)) if project.tree else []
    return {"node": node_index, "descendants": affected}


def evaluate_project(
    store: ProjectStore, project: Project, feature_dim: int = 16, seed: int = 0
) -> dict:
    """Single-project metric report over the stored frames."""
    seq = load_sequence(store, project)
    if not seq.complete:
        raise ValueError(f"project {project.id} is incomplete; generate it first")
    report = evaluation_report(
        {project.config.scheme: [seq]},
        RandomProjectionExtractor(dim=feature_dim),
        seed=seed,
    )
    store.save_report(project, report)
    return report


def load_sequence(store: ProjectStore, project: Project) -> FrameSequence:
    """Frames as stored on disk (None where a frame is missing)."""
    frames = []
    for i in range(project.config.num_frames + 1):
        path = store.frame_path(project, i)
        frames.append(store.load_frame(project, i) if path.is_file() else None)
    return FrameSequence(
        scheme=project.config.scheme,
        num_frames=project.config.num_frames,
        frames=frames,
        latents=[None] * (project.config.num_frames + 1),
    )
