// Typed client over the documented HTTP API. Every mutation the UI can issue
// goes through here; there are no hidden endpoints.

import type {
  CandidateSetInfo,
  JobInfo,
  MutationResponse,
  ProjectInfo,
  ProjectSummary,
  SkeletonKeypoints,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(path, init);
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

function postJson<T>(path: string, payload: unknown): Promise<T> {
  return request<T>(path, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(payload),
  });
}

export const api = {
  listProjects(): Promise<ProjectSummary[]> {
    return request("/api/projects");
  },

  getProject(projectId: string): Promise<ProjectInfo> {
    return request(`/api/projects/${projectId}`);
  },

  createProject(form: FormData): Promise<ProjectInfo> {
    return request("/api/projects", { method: "POST", body: form });
  },

  enqueueJob(
    projectId: string,
    kind: string,
    params: Record<string, unknown> = {},
    requestId?: string,
  ): Promise<JobInfo> {
    return postJson(`/api/projects/${projectId}/jobs`, {
      kind,
      params,
      request_id: requestId ?? null,
    });
  },

  getJob(jobId: string): Promise<JobInfo> {
    return request(`/api/jobs/${jobId}`);
  },

  getCandidates(projectId: string, nodeIndex: number): Promise<CandidateSetInfo> {
    return request(`/api/projects/${projectId}/nodes/${nodeIndex}/candidates`);
  },

  selectCandidate(
    projectId: string,
    nodeIndex: number,
    candidateId: number,
    baseRevision: number,
    requestId?: string,
  ): Promise<MutationResponse> {
    return postJson(`/api/projects/${projectId}/nodes/${nodeIndex}/selection`, {
      candidate_id: candidateId,
      base_revision: baseRevision,
      request_id: requestId ?? null,
    });
  },

  overridePrompt(
    projectId: string,
    nodeIndex: number,
    prompt: string,
    baseRevision: number,
    requestId?: string,
  ): Promise<MutationResponse> {
    return postJson(`/api/projects/${projectId}/nodes/${nodeIndex}/prompt`, {
      prompt,
      base_revision: baseRevision,
      request_id: requestId ?? null,
    });
  },

  overridePose(
    projectId: string,
    nodeIndex: number,
    keypoints: SkeletonKeypoints,
    baseRevision: number,
    requestId?: string,
  ): Promise<MutationResponse> {
    return postJson(`/api/projects/${projectId}/nodes/${nodeIndex}/pose`, {
      keypoints,
      base_revision: baseRevision,
      request_id: requestId ?? null,
    });
  },

  frameUrl(projectId: string, index: number): string {
    return `/api/projects/${projectId}/frames/${index}.png`;
  },

  exportUrl(projectId: string): string {
    return `/api/projects/${projectId}/export.zip`;
  },

  async fetchExport(projectId: string): Promise<ArrayBuffer> {
    const resp = await fetch(this.exportUrl(projectId));
    if (!resp.ok) throw new ApiError(resp.status, "export failed");
    return resp.arrayBuffer();
  },
};

export type Api = typeof api;
