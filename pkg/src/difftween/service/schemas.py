"""Request and response models for the HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class ConfigModel(BaseModel):
    scheme: str = "ours"
    num_frames: int = Field(8, ge=2)
    t_min_frac: float = 0.25
    t_max_frac: float = 0.65
    num_candidates: int = Field(4, ge=1)
    global_seed: int = 0
    substeps: int = Field(25, ge=1)
    num_steps: int = Field(1000, ge=1)
    schedule_profile: str = "vp-cosine"
    guidance_scale: float = Field(7.5, ge=0)
    use_pose: bool = True
    interpolation_weights: Optional[list[float]] = None
    motion: Optional[dict] = None


class NodeModel(BaseModel):
    index: int
    parent_lo: int
    parent_hi: int
    timestep: int
    level: int
    weight: float
    revision: int = 0
    selected: Optional[int] = None
    selection_source: Optional[str] = None
    num_candidates: int = 0


class TreeModel(BaseModel):
    num_frames: int
    timesteps: list[int]
    nodes: dict[str, NodeModel]


class FrameModel(BaseModel):
    index: int
    available: bool
    url: Optional[str] = None


class ProjectModel(BaseModel):
    id: str
    backend: str
    image_size: list[int]
    prompt: str
    negative_prompt: str
    ranking_prompts: list[str]
    config: ConfigModel
    tree: Optional[TreeModel] = None
    frames: list[FrameModel]
    has_embeddings: bool = False
    poses: dict[str, dict] = {}


class ProjectSummary(BaseModel):
    id: str
    scheme: str
    num_frames: int


class JobModel(BaseModel):
    id: str
    kind: str
    project_id: str
    status: str
    progress: float
    error: Optional[str] = None
    result: dict = {}


class JobRequest(BaseModel):
    kind: str
    params: dict = {}
    request_id: Optional[str] = None


class CandidateModel(BaseModel):
    candidate_id: int
    positive_score: Optional[float] = None
    negative_score: Optional[float] = None
    net_score: Optional[float] = None
    image_url: Optional[str] = None


class CandidateSetModel(BaseModel):
    node_index: int
    revision: int
    selected: Optional[int] = None
    selection_source: Optional[str] = None
    candidates: list[CandidateModel]


class SelectionRequest(BaseModel):
    candidate_id: int
    base_revision: int = 0
    request_id: Optional[str] = None


class PromptOverrideRequest(BaseModel):
    prompt: str = Field(min_length=1)
    base_revision: int = 0
    request_id: Optional[str] = None


class KeypointModel(BaseModel):
    x: float = Field(ge=0.0, le=1.0)
    y: float = Field(ge=0.0, le=1.0)
    confidence: float = Field(1.0, ge=0.0, le=1.0)


class PoseOverrideRequest(BaseModel):
    keypoints: dict[str, KeypointModel] = Field(min_length=1)
    base_revision: int = 0
    request_id: Optional[str] = None


class MutationResponse(BaseModel):
    project_id: str
    node_index: int
    revision: int
    affected: list[int]
    job: JobModel
    replayed: bool = False
