// Mirrors of the server's response models. The client never invents state:
// everything rendered comes from these payloads.

export interface CandidateInfo {
  candidate_id: number;
  positive_score: number | null;
  negative_score: number | null;
  net_score: number | null;
  image_url: string | null;
}

export interface CandidateSetInfo {
  node_index: number;
  revision: number;
  selected: number | null;
  selection_source: string | null;
  candidates: CandidateInfo[];
}

export interface NodeInfo {
  index: number;
  parent_lo: number;
  parent_hi: number;
  timestep: number;
  level: number;
  weight: number;
  revision: number;
  selected: number | null;
  selection_source: string | null;
  num_candidates: number;
}

export interface TreeInfo {
  num_frames: number;
  timesteps: number[];
  nodes: Record<string, NodeInfo>;
}

export interface FrameInfo {
  index: number;
  available: boolean;
  url: string | null;
}

export interface ConfigInfo {
  scheme: string;
  num_frames: number;
  num_candidates: number;
  global_seed: number;
  use_pose: boolean;
}

export interface ProjectInfo {
  id: string;
  backend: string;
  image_size: number[];
  prompt: string;
  negative_prompt: string;
  ranking_prompts: string[];
  config: ConfigInfo;
  tree: TreeInfo | null;
  frames: FrameInfo[];
  has_embeddings: boolean;
  poses: Record<string, string>;
}

export interface ProjectSummary {
  id: string;
  scheme: string;
  num_frames: number;
}

export interface JobInfo {
  id: string;
  kind: string;
  project_id: string;
  status: "queued" | "running" | "done" | "failed";
  progress: number;
  error: string | null;
  result: Record<string, unknown>;
}

export interface MutationResponse {
  project_id: string;
  node_index: number;
  revision: number;
  affected: number[];
  job: JobInfo;
  replayed: boolean;
}

export interface Keypoint {
  x: number;
  y: number;
  confidence: number;
}

export type SkeletonKeypoints = Record<string, Keypoint>;
