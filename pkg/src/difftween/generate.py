"""Execution of the interpolation schemes over a backend.

`run_interpolation` is the branching add-noise-interpolate-denoise scheme;
`run_baseline` covers the four reference schemes it is compared against.
Node generation is deterministic in (inputs, config, backend), and each node's
result is content-addressed by a fingerprint chained through its parents, so
a changed selection invalidates exactly the node's descendants and a resumed
run regenerates nothing that is already final.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .backends.base import Backend, ConditioningBundle
from .diffusion import (
    AffineTransform,
    Latent,
    NoiseSchedule,
    affine_power,
    ddim_denoise,
    forward_diffuse,
    forward_diffuse_step,
    slerp,
    warp_latent,
)
from .pose import PoseSkeleton, interpolate_pose, render_pose
from .ranking import Candidate, CandidateSet, score_set, select_best
from .tree import (
    MIN_GENERATION_STEPS,
    FrameNode,
    GenerationConfig,
    InterpolationTree,
    build_tree,
    default_levels,
    frame_schedule,
    keyed_noise,
    node_noise,
    plan_timesteps,
)

# Key-material tags keeping the independent noise streams apart.
_TRAJECTORY_TAG = 0x7261
_DID_TAG = 0xD1D0


def motion_transform(
    motion: Optional[dict], latent_hw: Optional[tuple[int, int]] = None
) -> Optional[AffineTransform]:
    """Parse a serializable motion spec into an affine transform.

    Zooms center on the latent midpoint unless an explicit center is given.
    """
    if motion is None:
        return None
    kind = motion.get("kind")
    if kind == "zoom":
        center = motion.get("center")
        if center is None:
            if latent_hw is None:
                center = (0.0, 0.0)
            else:
                h, w = latent_hw
                center = ((w - 1) / 2, (h - 1) / 2)
        return AffineTransform.zoom(float(motion["factor"]), center=tuple(center))
    if kind == "translate":
        return AffineTransform.translation(float(motion["dx"]), float(motion["dy"]))
    raise ValueError(f"unknown motion kind {kind!r}")


def apply_motion(parent_hi_latent: Latent, xf: AffineTransform, node: FrameNode) -> Latent:
    """Warp the high parent by the global transform raised to the node's position."""
    return warp_latent(parent_hi_latent, affine_power(xf, node.weight))


class ConditioningProvider:
    """Builds per-frame conditioning from the endpoint prompts and poses.

    Text embeddings are slerped at the frame's interpolation weight; pose
    keypoints are lerped. Per-node prompt or pose overrides replace the
    interpolated values for that node only.
    """

    def __init__(
        self,
        backend: Backend,
        positive_a: np.ndarray,
        positive_b: np.ndarray,
        negative: np.ndarray,
        skeleton_a: Optional[PoseSkeleton] = None,
        skeleton_b: Optional[PoseSkeleton] = None,
        guidance_scale: float = 7.5,
        use_pose: bool = True,
        conf_floor: float = 0.4,
    ):
        self.backend = backend
        self.positive_a = np.asarray(positive_a)
        self.positive_b = np.asarray(positive_b)
        self.negative = np.asarray(negative)
        self.skeleton_a = skeleton_a
        self.skeleton_b = skeleton_b
        self.guidance_scale = guidance_scale
        self.use_pose = use_pose and backend.caps.supports_pose
        self.conf_floor = conf_floor
        self.prompt_overrides: dict[int, np.ndarray] = {}
        self.pose_overrides: dict[int, PoseSkeleton] = {}

    @classmethod
    def from_prompts(
        cls,
        backend: Backend,
        prompt: str,
        negative_prompt: str = "",
        guidance_scale: float = 7.5,
        use_pose: bool = True,
        **kwargs,
    ) -> "ConditioningProvider":
        emb = backend.encode_text(prompt)
        return cls(
            backend,
            positive_a=emb,
            positive_b=emb,
            negative=backend.encode_text(negative_prompt),
            guidance_scale=guidance_scale,
            use_pose=use_pose,
            **kwargs,
        )

    def _positive(self, weight: float, node_index: Optional[int]) -> np.ndarray:
        if node_index is not None and node_index in self.prompt_overrides:
            return self.prompt_overrides[node_index]
        if weight == 0.0:
            return self.positive_a
        if weight == 1.0:
            return self.positive_b
        if np.array_equal(self.positive_a, self.positive_b):
            return self.positive_a
        return slerp(self.positive_a, self.positive_b, weight)

    def _pose_image(self, weight: float, node_index: Optional[int]) -> Optional[np.ndarray]:
        if not self.use_pose:
            return None
        skel = None
        if node_index is not None and node_index in self.pose_overrides:
            skel = self.pose_overrides[node_index]
        elif self.skeleton_a is not None and self.skeleton_b is not None:
            skel = interpolate_pose(self.skeleton_a, self.skeleton_b, weight, self.conf_floor)
        if skel is None or not skel.keypoints:
            return None
        return render_pose(skel, self.backend.caps.image_size)

    def bundle_for(self, weight: float, node_index: Optional[int] = None) -> ConditioningBundle:
        return ConditioningBundle(
            positive_embedding=self._positive(weight, node_index),
            negative_embedding=self.negative,
            pose_image=self._pose_image(weight, node_index),
            guidance_scale=self.guidance_scale,
        )

    def digest_material(self) -> dict:
        """Conditioning state that must participate in node fingerprints."""

        def arr(a):
            return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]

        return {
            "pos_a": arr(self.positive_a),
            "pos_b": arr(self.positive_b),
            "neg": arr(self.negative),
            "guidance": self.guidance_scale,
            "use_pose": self.use_pose,
            "skel_a": None if self.skeleton_a is None else sorted(self.skeleton_a.joints),
            "skel_b": None if self.skeleton_b is None else sorted(self.skeleton_b.joints),
            "prompt_overrides": {str(k): arr(v) for k, v in sorted(self.prompt_overrides.items())},
            "pose_overrides": {
                str(k): sorted(v.joints) for k, v in sorted(self.pose_overrides.items())
            },
        }


@dataclass
class FrameSequence:
    """Ordered frames 0..N with their clean latents and per-node candidates.

    Entries are None for frames not generated yet (partial, level-scoped runs).
    """

    scheme: str
    num_frames: int
    frames: list[Optional[np.ndarray]]
    latents: list[Optional[Latent]]
    tree: Optional[InterpolationTree] = None
    candidate_sets: dict[int, CandidateSet] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def complete(self) -> bool:
        return all(f is not None for f in self.frames)


class NodeCache(Protocol):
    """Persistence hook for crash-resume and subtree-preserving regeneration."""

    def lookup(self, node_index: int, fingerprint: str) -> Optional[CandidateSet]: ...

    def store(self, node_index: int, fingerprint: str, cands: CandidateSet) -> None: ...


def run_digest(config: GenerationConfig, provider: ConditioningProvider, backend_name: str = "") -> str:
    payload = {
        "config": {
            "scheme": config.scheme,
            "num_frames": config.num_frames,
            "t_min_frac": config.t_min_frac,
            "t_max_frac": config.t_max_frac,
            "num_candidates": config.num_candidates,
            "global_seed": config.global_seed,
            "substeps": config.substeps,
            "num_steps": config.num_steps,
            "schedule_profile": config.schedule_profile,
            "interpolation_weights": config.interpolation_weights,
            "motion": config.motion,
        },
        "conditioning": provider.digest_material(),
        "backend": backend_name,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _latent_digest(z: Latent) -> str:
    return hashlib.sha256(np.ascontiguousarray(z.data).tobytes()).hexdigest()


def node_fingerprint(
    base_digest: str, node: FrameNode, selected: int, fp_lo: str, fp_hi: str
) -> str:
    payload = f"{base_digest}|{node.index}|{node.level}|{node.timestep}|{selected}|{fp_lo}|{fp_hi}"
    return hashlib.sha256(payload.encode()).hexdigest()


def generate_frame(
    tree: InterpolationTree,
    node: FrameNode,
    backend: Backend,
    schedule: NoiseSchedule,
    cond: ConditioningBundle,
    config: GenerationConfig,
    parent_lo: Latent,
    parent_hi: Latent,
) -> CandidateSet:
    """Generate all candidates for one node; selection is left undecided.

    Each candidate noises both parents to the node's timestep with the same
    keyed noise, slerps at the node weight, denoises to 0, and decodes.
    """
    if parent_lo.timestep != 0 or parent_hi.timestep != 0:
        raise ValueError("parent latents must be clean (timestep 0)")
    xf = motion_transform(config.motion, latent_hw=parent_hi.data.shape[1:])
    if xf is not None:
        parent_hi = apply_motion(parent_hi, xf, node)

    def one_candidate(c: int) -> Candidate:
        eps = node_noise(config.global_seed, node, c, parent_lo.data.shape)
        z_lo = forward_diffuse(parent_lo, node.timestep, eps, schedule)
        z_hi = forward_diffuse(parent_hi, node.timestep, eps, schedule)
        mixed = Latent(slerp(z_lo.data, z_hi.data, node.weight), timestep=node.timestep)
        clean = ddim_denoise(
            mixed, node.timestep, 0, cond, backend, schedule, substeps=config.substeps
        )
        return Candidate(candidate_id=c, image=backend.decode_latent(clean), latent=clean)

    cands = CandidateSet(node_index=node.index)
    ids = range(config.num_candidates)
    if config.max_workers > 1 and config.num_candidates > 1:
        # Candidates are keyed by id, so results are identical to the serial
        # path regardless of completion order.
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            cands.candidates.extend(pool.map(one_candidate, ids))
    else:
        cands.candidates.extend(one_candidate(c) for c in ids)
    return cands


def _warn_short_schedule(schedule: NoiseSchedule) -> None:
    if schedule.num_steps < MIN_GENERATION_STEPS:
        warnings.warn(
            f"schedule has {schedule.num_steps} steps; generation quality is only "
            f"consistent with at least {MIN_GENERATION_STEPS}",
            stacklevel=3,
        )


def run_interpolation(
    image_a: np.ndarray,
    image_b: np.ndarray,
    config: GenerationConfig,
    backend: Backend,
    schedule: NoiseSchedule,
    provider: Optional[ConditioningProvider] = None,
    ranking_prompts: Optional[tuple[str, str]] = None,
    selections: Optional[dict[int, int]] = None,
    cache: Optional[NodeCache] = None,
    base_digest: str = "",
    progress: Optional[Callable[[int, int], None]] = None,
    up_to_level: Optional[int] = None,
) -> FrameSequence:
    """Run the branching scheme end to end and return ordered frames 0..N.

    `selections` pins candidate choices per node (user steering); nodes without
    a pin are auto-selected by ranking when `ranking_prompts` is given, else
    candidate 0. With a `cache`, nodes whose fingerprint is already stored are
    loaded instead of regenerated. `up_to_level` stops after that level; frames
    of deeper nodes come back as None (pending).
    """
    config.validate(enforce_min_steps=False)
    _warn_short_schedule(schedule)
    if provider is None:
        provider = ConditioningProvider.from_prompts(
            backend, "", guidance_scale=config.guidance_scale, use_pose=config.use_pose
        )
    n = config.num_frames
    z0 = {0: backend.encode_image(image_a), n: backend.encode_image(image_b)}
    levels_needed = default_levels(n)
    timesteps = plan_timesteps(
        schedule.num_steps, config.t_min_frac, config.t_max_frac, levels_needed
    )
    tree = build_tree(n, timesteps, positions=config.interpolation_weights, scheme="ours")

    fingerprints = {
        0: node_fingerprint_root(base_digest, 0, z0[0]),
        n: node_fingerprint_root(base_digest, n, z0[n]),
    }
    selections = dict(selections or {})
    candidate_sets: dict[int, CandidateSet] = {}
    all_nodes = [
        node
        for level_index, level in enumerate(tree.levels())
        if up_to_level is None or level_index <= up_to_level
        for node in level
    ]
    done = 0
    for node in all_nodes:
        pinned = selections.get(node.index)
        fp = node_fingerprint(
            base_digest,
            node,
            -1 if pinned is None else pinned,
            fingerprints[node.parent_lo],
            fingerprints[node.parent_hi],
        )
        cands = cache.lookup(node.index, fp) if cache is not None else None
        if cands is None:
            cond = provider.bundle_for(node.weight, node.index)
            cands = generate_frame(
                tree, node, backend, schedule, cond, config,
                z0[node.parent_lo], z0[node.parent_hi],
            )
            if pinned is not None:
                cands.selected = pinned
                cands.selection_source = "user"
            elif ranking_prompts is not None and config.num_candidates > 1:
                score_set(cands, ranking_prompts[0], ranking_prompts[1], backend)
                select_best(cands)
            else:
                cands.selected = cands.candidates[0].candidate_id
                cands.selection_source = "auto"
            if cache is not None:
                cache.store(node.index, fp, cands)
        candidate_sets[node.index] = cands
        z0[node.index] = _as_stored(cands.selected_candidate.latent)
        fingerprints[node.index] = fp
        done += 1
        if progress is not None:
            progress(done, len(all_nodes))

    frames = [
        backend.decode_latent(z0[i]) if i in z0 else None for i in range(n + 1)
    ]
    return FrameSequence(
        scheme="ours",
        num_frames=n,
        frames=frames,
        latents=[z0.get(i) for i in range(n + 1)],
        tree=tree,
        candidate_sets=candidate_sets,
    )


def node_fingerprint_root(base_digest: str, index: int, z: Latent) -> str:
    return hashlib.sha256(f"{base_digest}|input|{index}|{_latent_digest(z)}".encode()).hexdigest()


def _as_stored(z: Latent) -> Latent:
    """Quantize to the float32 precision of the on-disk latent cache.

    Wiring children off the stored precision makes fresh, resumed, and
    steered runs bit-identical wherever their fingerprints agree.
    """
    return Latent(z.data.astype(np.float32).astype(np.float64), timestep=z.timestep)


def _positions(config: GenerationConfig) -> list[float]:
    n = config.num_frames
    if config.interpolation_weights is not None:
        return [float(w) for w in config.interpolation_weights]
    return [i / n for i in range(n + 1)]


def run_baseline(
    scheme: str,
    image_a: np.ndarray,
    image_b: np.ndarray,
    config: GenerationConfig,
    backend: Backend,
    schedule: NoiseSchedule,
    provider: Optional[ConditioningProvider] = None,
) -> FrameSequence:
    """Run one of the four reference schemes.

    interpolate_only     slerp of the clean input latents, no diffusion
    interpolate_denoise  shared stepwise noising of both inputs, per-frame mix
                         at a triangular timestep profile, then denoise
    did                  denoise-interpolate-denoise over a branching pattern
    did_unshared         did with independent noise on the two inputs
    """
    if scheme not in ("interpolate_only", "interpolate_denoise", "did", "did_unshared"):
        raise ValueError(f"unknown baseline scheme {scheme!r}")
    config.validate(enforce_min_steps=False)
    if scheme != "interpolate_only":
        _warn_short_schedule(schedule)
    if provider is None:
        provider = ConditioningProvider.from_prompts(
            backend, "", guidance_scale=config.guidance_scale, use_pose=config.use_pose
        )
    n = config.num_frames
    pos = _positions(config)
    z0_a = backend.encode_image(image_a)
    z0_b = backend.encode_image(image_b)
    latents: dict[int, Latent] = {0: z0_a, n: z0_b}

    if scheme == "interpolate_only":
        for i in range(n + 1):
            latents[i] = Latent(slerp(z0_a.data, z0_b.data, pos[i]), timestep=0)
    elif scheme == "interpolate_denoise":
        latents.update(
            _interpolate_denoise_frames(z0_a, z0_b, config, backend, schedule, provider, pos)
        )
    else:
        latents.update(
            _did_frames(z0_a, z0_b, config, backend, schedule, provider, pos,
                        shared=(scheme == "did"))
        )

    frames = [backend.decode_latent(latents[i]) for i in range(n + 1)]
    return FrameSequence(
        scheme=scheme,
        num_frames=n,
        frames=frames,
        latents=[latents[i] for i in range(n + 1)],
    )


def _interpolate_denoise_frames(
    z0_a: Latent,
    z0_b: Latent,
    config: GenerationConfig,
    backend: Backend,
    schedule: NoiseSchedule,
    provider: ConditioningProvider,
    pos: list[float],
) -> dict[int, Latent]:
    n = config.num_frames
    t_min = round(config.t_min_frac * schedule.num_steps)
    t_max = round(config.t_max_frac * schedule.num_steps)
    frame_t = {i: frame_schedule(i, n, t_min, t_max) for i in range(1, n)}
    deepest = max(frame_t.values())

    # Shared stepwise trajectories of both inputs (same eps_t per step).
    traj_a, traj_b = {0: z0_a}, {0: z0_b}
    za, zb = z0_a, z0_b
    for t in range(1, deepest + 1):
        eps_t = keyed_noise(z0_a.data.shape, config.global_seed, _TRAJECTORY_TAG, t)
        za = forward_diffuse_step(za, eps_t, schedule)
        zb = forward_diffuse_step(zb, eps_t, schedule)
        traj_a[t], traj_b[t] = za, zb

    out: dict[int, Latent] = {}
    for i in range(1, n):
        t = frame_t[i]
        mixed = Latent(slerp(traj_a[t].data, traj_b[t].data, pos[i]), timestep=t)
        if t == 0:
            out[i] = mixed
            continue
        cond = provider.bundle_for(pos[i], None)
        out[i] = ddim_denoise(mixed, t, 0, cond, backend, schedule, substeps=config.substeps)
    return out


def did_input_noise(
    global_seed: int, shape: tuple, shared: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Noise applied once to the two inputs before the did trajectory.

    The shared variant applies one array to both; the unshared variant keys
    two independent arrays.
    """
    if shared:
        eps = keyed_noise(shape, global_seed, _DID_TAG)
        return eps, eps
    return (
        keyed_noise(shape, global_seed, _DID_TAG, 0),
        keyed_noise(shape, global_seed, _DID_TAG, 1),
    )


def _did_frames(
    z0_a: Latent,
    z0_b: Latent,
    config: GenerationConfig,
    backend: Backend,
    schedule: NoiseSchedule,
    provider: ConditioningProvider,
    pos: list[float],
    shared: bool,
) -> dict[int, Latent]:
    n = config.num_frames
    levels_needed = default_levels(n)
    timesteps = plan_timesteps(
        schedule.num_steps, config.t_min_frac, config.t_max_frac, levels_needed
    )
    tree = build_tree(n, timesteps, positions=config.interpolation_weights, scheme="did")
    deepest = timesteps[-1]

    eps_a, eps_b = did_input_noise(config.global_seed, z0_a.data.shape, shared)
    tracked: dict[int, Latent] = {
        0: forward_diffuse(z0_a, deepest, eps_a, schedule),
        n: forward_diffuse(z0_b, deepest, eps_b, schedule),
    }

    levels = tree.levels()
    for li, level in enumerate(levels):
        for node in level:
            mixed = slerp(
                tracked[node.parent_lo].data, tracked[node.parent_hi].data, node.weight
            )
            tracked[node.index] = Latent(mixed, timestep=node.timestep)
        t_cur = level[0].timestep
        t_next = levels[li + 1][0].timestep if li + 1 < len(levels) else 0
        targets = tracked if li + 1 < len(levels) else {
            i: z for i, z in tracked.items() if 0 < i < n
        }
        for idx in list(targets):
            cond = provider.bundle_for(pos[idx], None)
            tracked[idx] = ddim_denoise(
                tracked[idx], t_cur, t_next, cond, backend, schedule, substeps=config.substeps
            )
    return {i: z for i, z in tracked.items() if 0 < i < n}


def run_scheme(
    scheme: str,
    image_a: np.ndarray,
    image_b: np.ndarray,
    config: GenerationConfig,
    backend: Backend,
    schedule: NoiseSchedule,
    provider: Optional[ConditioningProvider] = None,
    **kwargs,
) -> FrameSequence:
    """Dispatch to the branching scheme or one of the baselines."""
    if scheme == "ours":
        return run_interpolation(
            image_a, image_b, config, backend, schedule, provider=provider, **kwargs
        )
    return run_baseline(scheme, image_a, image_b, config, backend, schedule, provider=provider)
