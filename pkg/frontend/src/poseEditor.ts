// Keypoint editing model behind the drag editor. All coordinates live in the
// unit square; submissions are validated client-side before any API call.

import type { Api } from "./api.js";
import type { MutationResponse, SkeletonKeypoints } from "./types.js";

export const JOINT_NAMES = [
  "nose", "neck",
  "right_shoulder", "right_elbow", "right_wrist",
  "left_shoulder", "left_elbow", "left_wrist",
  "right_hip", "right_knee", "right_ankle",
  "left_hip", "left_knee", "left_ankle",
  "right_eye", "left_eye", "right_ear", "left_ear",
] as const;

export function clampUnit(v: number): number {
  return Math.min(1, Math.max(0, v));
}

export function moveJoint(
  keypoints: SkeletonKeypoints,
  name: string,
  x: number,
  y: number,
): SkeletonKeypoints {
  const current = keypoints[name];
  if (!current) throw new Error(`no joint ${name} to move`);
  return {
    ...keypoints,
    [name]: { ...current, x: clampUnit(x), y: clampUnit(y) },
  };
}

export function validateSkeleton(keypoints: SkeletonKeypoints): string[] {
  const errors: string[] = [];
  const names = Object.keys(keypoints);
  if (names.length === 0) errors.push("skeleton has no keypoints");
  for (const name of names) {
    if (!(JOINT_NAMES as readonly string[]).includes(name)) {
      errors.push(`unknown joint ${name}`);
      continue;
    }
    const kp = keypoints[name];
    if (!(kp.x >= 0 && kp.x <= 1 && kp.y >= 0 && kp.y <= 1)) {
      errors.push(`${name} position outside the unit square`);
    }
    if (!(kp.confidence >= 0 && kp.confidence <= 1)) {
      errors.push(`${name} confidence outside [0, 1]`);
    }
  }
  return errors;
}

export function validatePrompt(prompt: string): string[] {
  return prompt.trim().length === 0 ? ["prompt must not be empty"] : [];
}

export async function submitPoseOverride(
  client: Pick<Api, "overridePose">,
  projectId: string,
  nodeIndex: number,
  keypoints: SkeletonKeypoints,
  baseRevision: number,
  requestId?: string,
): Promise<MutationResponse> {
  const errors = validateSkeleton(keypoints);
  if (errors.length > 0) throw new Error(errors.join("; "));
  return client.overridePose(projectId, nodeIndex, keypoints, baseRevision, requestId);
}

export async function submitPromptOverride(
  client: Pick<Api, "overridePrompt">,
  projectId: string,
  nodeIndex: number,
  prompt: string,
  baseRevision: number,
  requestId?: string,
): Promise<MutationResponse> {
  const errors = validatePrompt(prompt);
  if (errors.length > 0) throw new Error(errors.join("; "));
  return client.overridePrompt(projectId, nodeIndex, prompt, baseRevision, requestId);
}

/** Map a pointer event position inside the canvas rect to unit coordinates. */
export function canvasToUnit(
  px: number,
  py: number,
  rect: { left: number; top: number; width: number; height: number },
): { x: number; y: number } {
  return {
    x: clampUnit((px - rect.left) / rect.width),
    y: clampUnit((py - rect.top) / rect.height),
  };
}
