"""Branching generation plan: which frames parent which, at which noise level.

The root frame mixes the two inputs at the deepest timestep; each further
level refines between existing frames at progressively lower noise. Noise is
derived from a keyed counter-based generator so any node can be regenerated in
isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SCHEMES = ("ours", "interpolate_only", "interpolate_denoise", "did", "did_unshared")

MIN_GENERATION_STEPS = 200


@dataclass(frozen=True)
class FrameNode:
    index: int
    parent_lo: int
    parent_hi: int
    timestep: int
    level: int
    weight: float
    noise_key: tuple = ()

    def __post_init__(self):
        if not self.parent_lo < self.index < self.parent_hi:
            raise ValueError(
                f"node {self.index} must lie strictly between parents "
                f"({self.parent_lo}, {self.parent_hi})"
            )
        if not 0.0 < self.weight < 1.0:
            raise ValueError(f"node weight must be in (0, 1), got {self.weight}")
        if not self.noise_key:
            object.__setattr__(self, "noise_key", (self.index, self.level))


@dataclass(frozen=True)
class InterpolationTree:
    num_frames: int
    timesteps: tuple
    nodes: dict[int, FrameNode]
    scheme: str = "ours"

    def levels(self) -> list[list[FrameNode]]:
        """Nodes grouped by level, shallowest-noise... root (level 0) first."""
        depth = 1 + max((n.level for n in self.nodes.values()), default=-1)
        out = [[] for _ in range(depth)]
        for node in self.nodes.values():
            out[node.level].append(node)
        for group in out:
            group.sort(key=lambda n: n.index)
        return out

    def children(self, index: int) -> list[FrameNode]:
        return sorted(
            (n for n in self.nodes.values() if index in (n.parent_lo, n.parent_hi)),
            key=lambda n: n.index,
        )

    def descendants(self, index: int) -> set:
        """Interior frame indices whose generation depends on frame `index`."""
        out: set = set()
        frontier = [index]
        while frontier:
            current = frontier.pop()
            for child in self.children(current):
                if child.index not in out:
                    out.add(child.index)
                    frontier.append(child.index)
        return out

    def validate(self) -> None:
        interior = set(range(1, self.num_frames))
        if set(self.nodes) != interior:
            raise ValueError("every interior index must appear exactly once")
        if list(self.timesteps) != sorted(set(self.timesteps)):
            raise ValueError("timesteps must be strictly increasing")
        k = len(self.timesteps)
        for node in self.nodes.values():
            if node.timestep != self.timesteps[k - 1 - node.level]:
                raise ValueError(f"node {node.index} timestep inconsistent with its level")
            for parent in (node.parent_lo, node.parent_hi):
                if parent in self.nodes:
                    anc = self.nodes[parent]
                    if anc.level >= node.level:
                        raise ValueError(f"parent {parent} of node {node.index} is not shallower")


@dataclass(frozen=True)
class GenerationConfig:
    """Everything a generation run needs beyond the two input images."""

    scheme: str = "ours"
    num_frames: int = 8
    t_min_frac: float = 0.25
    t_max_frac: float = 0.65
    num_candidates: int = 4
    global_seed: int = 0
    substeps: int = 25
    num_steps: int = 1000
    schedule_profile: str = "vp-cosine"
    guidance_scale: float = 7.5
    use_pose: bool = True
    interpolation_weights: Optional[tuple] = None
    motion: Optional[dict] = None
    max_workers: int = 1  # >1 generates a node's candidates concurrently

    def validate(self, enforce_min_steps: bool = True) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; known: {SCHEMES}")
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if not (0.0 < self.t_min_frac <= self.t_max_frac < 1.0):
            raise ValueError(
                f"timestep window must satisfy 0 < t_min <= t_max < 1, "
                f"got [{self.t_min_frac}, {self.t_max_frac}]"
            )
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        if enforce_min_steps and self.num_steps < MIN_GENERATION_STEPS:
            raise ValueError(
                f"generation needs a schedule of at least {MIN_GENERATION_STEPS} steps, "
                f"got {self.num_steps}"
            )
        if self.interpolation_weights is not None:
            w = list(self.interpolation_weights)
            if len(w) != self.num_frames + 1:
                raise ValueError("interpolation_weights must have num_frames + 1 entries")
            if w[0] != 0.0 or w[-1] != 1.0:
                raise ValueError("interpolation_weights must start at 0 and end at 1")
            if any(b <= a for a, b in zip(w, w[1:])):
                raise ValueError("interpolation_weights must be strictly increasing")


def default_levels(num_frames: int) -> int:
    """Binary-bisection depth needed to cover all interior frames."""
    return max(1, math.ceil(math.log2(num_frames)))


def plan_timesteps(
    num_steps: int, t_min_frac: float, t_max_frac: float, levels: int
) -> tuple:
    """K timesteps on a linear grid inside the usable noise window, increasing.

    A single level uses the deepest point of the window.
    """
    t_min = round(t_min_frac * num_steps)
    t_max = round(t_max_frac * num_steps)
    if t_min < 1:
        raise ValueError("t_min_frac places the shallowest level below timestep 1")
    if levels == 1:
        return (t_max,)
    grid = [round(v) for v in np.linspace(t_min, t_max, levels)]
    if len(set(grid)) != levels:
        raise ValueError(f"schedule of {num_steps} steps is too coarse for {levels} levels")
    return tuple(grid)


def _split_points(lo: int, hi: int, parts: int) -> list[int]:
    """Floor-rounded cut indices splitting [lo, hi] into `parts` intervals."""
    cuts = []
    for j in range(1, parts):
        c = lo + (hi - lo) * j // parts
        if lo < c < hi and c not in cuts:
            cuts.append(c)
    return cuts


def build_tree(
    num_frames: int,
    timesteps: Sequence[int],
    branching: Optional[Sequence[int]] = None,
    positions: Optional[Sequence[float]] = None,
    scheme: str = "ours",
) -> InterpolationTree:
    """Assign parents and noise levels to the interior frames 1..N-1.

    Default branching is binary bisection with floor rounding; the final level
    sweeps up every still-unassigned interior frame so any (N, K) combination
    yields a complete tree. Explicit per-level branching factors are honored
    as given and must cover all interior frames.

    `positions` optionally maps frame indices to interpolation coordinates
    (strictly increasing, 0 at frame 0, 1 at frame N) for non-uniform
    interpolation schedules; node weights are measured in that coordinate.
    """
    n = num_frames
    if n < 2:
        raise ValueError("num_frames must be >= 2")
    ts = [int(t) for t in timesteps]
    if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("timesteps must be a nonempty strictly increasing sequence")
    if branching is not None and len(branching) != len(ts):
        raise ValueError("branching must give one factor per level")
    if positions is None:
        pos = [i / n for i in range(n + 1)]
    else:
        pos = [float(p) for p in positions]
        if len(pos) != n + 1 or any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("positions must be strictly increasing with num_frames + 1 entries")

    k = len(ts)
    nodes: dict[int, FrameNode] = {}
    gaps = [(0, n)]
    for level in range(k):
        t = ts[k - 1 - level]
        next_gaps = []
        for lo, hi in gaps:
            if branching is not None:
                cuts = _split_points(lo, hi, int(branching[level]))
            elif level == k - 1:
                cuts = list(range(lo + 1, hi))
            else:
                cuts = _split_points(lo, hi, 2)
            for c in cuts:
                weight = (pos[c] - pos[lo]) / (pos[hi] - pos[lo])
                nodes[c] = FrameNode(
                    index=c, parent_lo=lo, parent_hi=hi, timestep=t, level=level, weight=weight
                )
            bounds = [lo] + cuts + [hi]
            next_gaps.extend(
                (a, b) for a, b in zip(bounds, bounds[1:]) if b - a >= 2
            )
        gaps = next_gaps
        if not gaps:
            break
    if gaps:
        raise ValueError(
            f"insufficient levels: frames inside {gaps} remain unassigned after {k} levels"
        )
    tree = InterpolationTree(num_frames=n, timesteps=tuple(ts), nodes=nodes, scheme=scheme)
    tree.validate()
    return tree


def keyed_noise(shape: tuple, global_seed: int, *key: int) -> np.ndarray:
    """Standard-normal array from a keyed counter-based generator (Philox)."""
    ss = np.random.SeedSequence(entropy=global_seed, spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(shape)


def node_noise(global_seed: int, node: FrameNode, candidate: int, shape: tuple) -> np.ndarray:
    """Noise shared by both parents of `node` for one candidate generation.

    Deterministic in (global_seed, node index, level, candidate); fresh across
    nodes and candidates.
    """
    return keyed_noise(shape, global_seed, node.index, node.level, candidate)


def frame_schedule(i: int, num_frames: int, t_min: int, t_max: int) -> int:
    """Triangular noise profile peaking at the middle frame.

    Interior frames only: the inputs are never re-noised.
    """
    if not 0 < i < num_frames:
        raise ValueError(f"frame_schedule is defined on interior frames, got {i}")
    frac = 1.0 - abs(2.0 * i / num_frames - 1.0)
    return round(t_min + (t_max - t_min) * frac)
