"""Generate-and-select: score decoded candidates against positive and negative
prompts and keep the one with the highest margin."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .diffusion import Latent

DEFAULT_POSITIVE_RANKING_PROMPT = "high quality, detailed, 2D"
DEFAULT_NEGATIVE_RANKING_PROMPT = "blurry, distorted, 3D render"


class Scorer(Protocol):
    def clip_similarity(self, image: np.ndarray, prompt: str) -> float: ...


@dataclass
class Candidate:
    candidate_id: int
    image: Optional[np.ndarray] = None
    latent: Optional[Latent] = None
    positive_score: Optional[float] = None
    negative_score: Optional[float] = None
    net_score: Optional[float] = None

    @property
    def scored(self) -> bool:
        return self.net_score is not None


@dataclass
class CandidateSet:
    """Per-node alternative generations with scores and selection state."""

    node_index: int
    candidates: list[Candidate] = field(default_factory=list)
    selected: Optional[int] = None
    selection_source: str = "auto"

    def get(self, candidate_id: int) -> Candidate:
        for c in self.candidates:
            if c.candidate_id == candidate_id:
                return c
        raise KeyError(f"node {self.node_index} has no candidate {candidate_id}")

    @property
    def selected_candidate(self) -> Candidate:
        if self.selected is None:
            raise ValueError(f"node {self.node_index} has no selection yet")
        return self.get(self.selected)

    def validate(self) -> None:
        ids = [c.candidate_id for c in self.candidates]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate candidate ids")
        for c in self.candidates:
            if c.scored and abs(c.net_score - (c.positive_score - c.negative_score)) > 1e-12:
                raise ValueError(f"candidate {c.candidate_id} net score inconsistent")


def score_candidate(
    image: np.ndarray, pos_prompt: str, neg_prompt: str, scorer: Scorer
) -> tuple[float, float, float]:
    """Positive score, negative score, and their difference. Two scorer calls."""
    pos = scorer.clip_similarity(image, pos_prompt)
    neg = scorer.clip_similarity(image, neg_prompt)
    return pos, neg, pos - neg


def score_set(cands: CandidateSet, pos_prompt: str, neg_prompt: str, scorer: Scorer) -> None:
    for c in cands.candidates:
        c.positive_score, c.negative_score, c.net_score = score_candidate(
            c.image, pos_prompt, neg_prompt, scorer
        )


def select_best(cands: CandidateSet) -> int:
    """Auto-select the argmax of net score; ties go to the lowest candidate id."""
    if not cands.candidates:
        raise ValueError(f"node {cands.node_index} has no candidates to select from")
    if any(not c.scored for c in cands.candidates):
        raise ValueError(f"node {cands.node_index} has unscored candidates")
    best = max(
        sorted(cands.candidates, key=lambda c: c.candidate_id),
        key=lambda c: c.net_score,
    )
    cands.selected = best.candidate_id
    cands.selection_source = "auto"
    return best.candidate_id


def apply_user_selection(cands: CandidateSet, candidate_id: int) -> bool:
    """Record a manual selection; returns whether the selection actually changed.

    A changed selection is the orchestrator's signal to invalidate and
    regenerate every descendant of the node.
    """
    cands.get(candidate_id)
    changed = cands.selected != candidate_id
    cands.selected = candidate_id
    cands.selection_source = "user"
    return changed
