// View model for the branching tree and the film strip. Built purely from the
// server payload after every poll: the client invents no nodes.

import type { FrameInfo, ProjectInfo } from "./types.js";

export type NodeBadge = "regenerating" | "pending" | "auto" | "user";

export interface NodeView {
  index: number;
  level: number;
  parents: [number, number];
  timestep: number;
  selected: number | null;
  badge: NodeBadge;
  thumbnailUrl: string | null;
}

export interface FrameSlot {
  index: number;
  url: string | null;
  pending: boolean;
  isInput: boolean;
}

export interface TreeViewModel {
  levels: NodeView[][];
  filmstrip: FrameSlot[];
}

function frameUrl(frames: FrameInfo[], index: number): string | null {
  const frame = frames[index];
  return frame && frame.available ? frame.url : null;
}

export function buildTreeView(
  project: ProjectInfo,
  regenerating: ReadonlySet<number> = new Set(),
): TreeViewModel {
  const filmstrip: FrameSlot[] = project.frames.map((f) => ({
    index: f.index,
    url: f.available ? f.url : null,
    pending: !f.available || regenerating.has(f.index),
    isInput: f.index === 0 || f.index === project.frames.length - 1,
  }));

  const levels: NodeView[][] = [];
  if (project.tree !== null) {
    for (const node of Object.values(project.tree.nodes)) {
      const badge: NodeBadge = regenerating.has(node.index)
        ? "regenerating"
        : node.num_candidates === 0
          ? "pending"
          : node.selection_source === "user"
            ? "user"
            : "auto";
      while (levels.length <= node.level) levels.push([]);
      levels[node.level].push({
        index: node.index,
        level: node.level,
        parents: [node.parent_lo, node.parent_hi],
        timestep: node.timestep,
        selected: node.selected,
        badge,
        thumbnailUrl: frameUrl(project.frames, node.index),
      });
    }
    for (const level of levels) level.sort((a, b) => a.index - b.index);
  }
  return { levels, filmstrip };
}

/** Nodes that should show a "regenerating" badge after a mutation response. */
export function regeneratingSet(mutatedNode: number, affected: number[]): Set<number> {
  return new Set([mutatedNode, ...affected]);
}
