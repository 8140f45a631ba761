// Candidate comparison board: highest net score first, stable by id on ties.
// Selecting dispatches exactly one API call; the returned regeneration job
// and affected set are surfaced to the caller.

import type { Api } from "./api.js";
import type { CandidateInfo, CandidateSetInfo, MutationResponse } from "./types.js";

export function sortCandidates(candidates: CandidateInfo[]): CandidateInfo[] {
  return [...candidates].sort((a, b) => {
    const an = a.net_score;
    const bn = b.net_score;
    if (an === null && bn === null) return a.candidate_id - b.candidate_id;
    if (an === null) return 1;
    if (bn === null) return -1;
    if (bn !== an) return bn - an;
    return a.candidate_id - b.candidate_id;
  });
}

export interface BoardModel {
  nodeIndex: number;
  revision: number;
  selected: number | null;
  /** sorted for display, net score descending */
  candidates: CandidateInfo[];
  /** true when there is nothing to show and the UI should offer "generate" */
  needsGeneration: boolean;
}

export function buildBoard(set: CandidateSetInfo): BoardModel {
  return {
    nodeIndex: set.node_index,
    revision: set.revision,
    selected: set.selected,
    candidates: sortCandidates(set.candidates),
    needsGeneration: set.candidates.length === 0,
  };
}

export function formatScores(c: CandidateInfo): string {
  if (c.net_score === null) return "unscored";
  const pos = c.positive_score?.toFixed(3) ?? "-";
  const neg = c.negative_score?.toFixed(3) ?? "-";
  return `pos ${pos}  neg ${neg}  net ${c.net_score.toFixed(3)}`;
}

export interface SelectionResult {
  response: MutationResponse;
  /** indices the server reported as invalidated by this selection */
  affected: number[];
}

export async function submitSelection(
  client: Pick<Api, "selectCandidate">,
  projectId: string,
  board: BoardModel,
  candidateId: number,
  requestId?: string,
): Promise<SelectionResult> {
  const response = await client.selectCandidate(
    projectId,
    board.nodeIndex,
    candidateId,
    board.revision,
    requestId,
  );
  return { response, affected: response.affected };
}
