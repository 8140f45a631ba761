// Page wiring. All state shown here is reconstructable from API reads: the
// client keeps only view state (current project id, selected node, pending
// regeneration badges) and refetches after every mutation or finished job.

import { api, ApiError } from "./api.js";
import { buildBoard, formatScores, sortCandidates, submitSelection } from "./candidateBoard.js";
import { describeExport, exportSequence } from "./filmstrip.js";
import { pollJob } from "./poll.js";
import {
  canvasToUnit,
  JOINT_NAMES,
  moveJoint,
  submitPoseOverride,
  submitPromptOverride,
  validatePrompt,
} from "./poseEditor.js";
import { buildTreeView, regeneratingSet } from "./treeView.js";
import type { JobInfo, ProjectInfo, SkeletonKeypoints } from "./types.js";

interface ViewState {
  project: ProjectInfo | null;
  selectedNode: number | null;
  regenerating: Set<number>;
  editorKeypoints: SkeletonKeypoints | null;
  draggingJoint: string | null;
}

const state: ViewState = {
  project: null,
  selectedNode: null,
  regenerating: new Set(),
  editorKeypoints: null,
  draggingJoint: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false) {
  const bar = el<HTMLDivElement>("status");
  bar.textContent = text;
  bar.className = isError ? "status error" : "status";
}

async function refreshProjectList() {
  const projects = await api.listProjects();
  const select = el<HTMLSelectElement>("project-select");
  const current = select.value;
  select.innerHTML = "<option value=''>choose a project…</option>";
  for (const p of projects) {
    const option = document.createElement("option");
    option.value = p.id;
    option.textContent = `${p.id} (${p.scheme}, ${p.num_frames + 1} frames)`;
    select.appendChild(option);
  }
  select.value = current;
}

async function loadProject(projectId: string) {
  state.project = await api.getProject(projectId);
  renderAll();
}

function renderAll() {
  renderTree();
  renderFilmstrip();
  void renderBoard();
  renderEditor();
}

function renderTree() {
  const host = el<HTMLDivElement>("tree");
  host.innerHTML = "";
  if (!state.project) return;
  const view = buildTreeView(state.project, state.regenerating);
  view.levels.forEach((level, levelIndex) => {
    const row = document.createElement("div");
    row.className = "tree-level";
    const label = document.createElement("span");
    label.className = "level-label";
    label.textContent = `level ${levelIndex} (t=${level[0]?.timestep ?? "-"})`;
    row.appendChild(label);
    for (const node of level) {
      const card = document.createElement("button");
      card.className = `node badge-${node.badge}` + (state.selectedNode === node.index ? " active" : "");
      card.title = `parents ${node.parents[0]} and ${node.parents[1]}`;
      const thumb = document.createElement("div");
      thumb.className = "thumb";
      if (node.thumbnailUrl) {
        const img = document.createElement("img");
        img.src = `${node.thumbnailUrl}?r=${state.project!.tree?.nodes[node.index]?.revision ?? 0}`;
        thumb.appendChild(img);
      } else {
        thumb.textContent = node.badge;
      }
      card.appendChild(thumb);
      const caption = document.createElement("span");
      caption.textContent = `#${node.index} · ${node.badge}`;
      card.appendChild(caption);
      card.addEventListener("click", () => {
        state.selectedNode = node.index;
        renderAll();
      });
      row.appendChild(card);
    }
    host.appendChild(row);
  });
}

function renderFilmstrip() {
  const host = el<HTMLDivElement>("filmstrip");
  host.innerHTML = "";
  if (!state.project) return;
  const view = buildTreeView(state.project, state.regenerating);
  for (const slot of view.filmstrip) {
    const cell = document.createElement("div");
    cell.className = "strip-cell" + (slot.pending ? " pending" : "");
    if (slot.url) {
      const img = document.createElement("img");
      img.src = slot.url;
      cell.appendChild(img);
    } else {
      cell.textContent = "…";
    }
    const label = document.createElement("span");
    label.textContent = slot.isInput ? `input ${slot.index}` : `${slot.index}`;
    cell.appendChild(label);
    host.appendChild(cell);
  }
}

async function renderBoard() {
  const host = el<HTMLDivElement>("board");
  host.innerHTML = "";
  if (!state.project || state.selectedNode === null || !state.project.tree) return;
  let set;
  try {
    set = await api.getCandidates(state.project.id, state.selectedNode);
  } catch (err) {
    host.textContent = err instanceof ApiError ? err.message : String(err);
    return;
  }
  const board = buildBoard(set);
  const heading = document.createElement("h3");
  heading.textContent = `node ${board.nodeIndex} candidates`;
  host.appendChild(heading);
  if (board.needsGeneration) {
    const button = document.createElement("button");
    button.textContent = "generate this level";
    button.addEventListener("click", () => void runJob("generate_level", {}));
    host.appendChild(button);
    return;
  }
  for (const candidate of board.candidates) {
    const card = document.createElement("div");
    card.className = "candidate" + (candidate.candidate_id === board.selected ? " selected" : "");
    if (candidate.image_url) {
      const img = document.createElement("img");
      img.src = candidate.image_url;
      card.appendChild(img);
    }
    const scores = document.createElement("div");
    scores.className = "scores";
    scores.textContent = `#${candidate.candidate_id}  ${formatScores(candidate)}`;
    card.appendChild(scores);
    const pick = document.createElement("button");
    pick.textContent = candidate.candidate_id === board.selected ? "selected" : "select";
    pick.addEventListener("click", () => void handleSelect(board, candidate.candidate_id));
    card.appendChild(pick);
    host.appendChild(card);
  }
}

async function handleSelect(board: ReturnType<typeof buildBoard>, candidateId: number) {
  if (!state.project) return;
  try {
    const { response, affected } = await submitSelection(
      api, state.project.id, board, candidateId, crypto.randomUUID(),
    );
    state.regenerating = regeneratingSet(board.nodeIndex, affected);
    renderTree();
    renderFilmstrip();
    setStatus(`regenerating ${affected.length} descendant frame(s)…`);
    await trackJob(response.job);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setStatus("this node changed elsewhere; reloading project state", true);
      await loadProject(state.project.id);
    } else {
      setStatus(String(err), true);
    }
  }
}

function defaultSkeleton(): SkeletonKeypoints {
  const out: SkeletonKeypoints = {};
  JOINT_NAMES.forEach((name, i) => {
    out[name] = { x: 0.2 + 0.6 * ((i % 6) / 5), y: 0.15 + 0.7 * (Math.floor(i / 6) / 2), confidence: 1.0 };
  });
  return out;
}

function nodeSkeleton(): SkeletonKeypoints {
  const project = state.project;
  if (!project || state.selectedNode === null) return defaultSkeleton();
  const override = project.poses[`node_${state.selectedNode}`] as
    | { keypoints?: SkeletonKeypoints }
    | undefined;
  if (override?.keypoints && Object.keys(override.keypoints).length > 0) {
    return JSON.parse(JSON.stringify(override.keypoints)) as SkeletonKeypoints;
  }
  return defaultSkeleton();
}

function renderEditor() {
  const host = el<HTMLDivElement>("editor");
  const canvas = el<HTMLCanvasElement>("pose-canvas");
  if (!state.project || state.selectedNode === null) {
    host.classList.add("hidden");
    return;
  }
  host.classList.remove("hidden");
  el<HTMLSpanElement>("editor-node").textContent = String(state.selectedNode);
  if (state.editorKeypoints === null) state.editorKeypoints = nodeSkeleton();
  drawSkeleton(canvas, state.editorKeypoints);
}

function drawSkeleton(canvas: HTMLCanvasElement, keypoints: SkeletonKeypoints) {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#6cf";
  ctx.font = "9px sans-serif";
  for (const [name, kp] of Object.entries(keypoints)) {
    const px = kp.x * canvas.width;
    const py = kp.y * canvas.height;
    ctx.beginPath();
    ctx.arc(px, py, 4, 0, Math.PI * 2);
    ctx.fill();
    ctx.fillText(name.replace(/_/g, " "), px + 6, py + 3);
  }
}

function nearestJoint(keypoints: SkeletonKeypoints, x: number, y: number): string | null {
  let best: string | null = null;
  let bestDist = 0.05; // grab radius in unit coordinates
  for (const [name, kp] of Object.entries(keypoints)) {
    const d = Math.hypot(kp.x - x, kp.y - y);
    if (d < bestDist) {
      best = name;
      bestDist = d;
    }
  }
  return best;
}

async function trackJob(job: JobInfo) {
  try {
    const finished = await pollJob((id) => api.getJob(id), job.id, {
      onUpdate: (j) => setStatus(`${j.kind}: ${j.status} ${(j.progress * 100).toFixed(0)}%`),
    });
    setStatus(`${finished.kind} done`);
  } catch (err) {
    setStatus(String(err), true);
  } finally {
    state.regenerating = new Set();
    state.editorKeypoints = null;
    if (state.project) await loadProject(state.project.id);
  }
}

async function runJob(kind: string, params: Record<string, unknown>) {
  if (!state.project) return;
  try {
    const job = await api.enqueueJob(state.project.id, kind, params, crypto.randomUUID());
    setStatus(`${kind} queued`);
    await trackJob(job);
  } catch (err) {
    setStatus(String(err), true);
  }
}

function wireEvents() {
  el<HTMLSelectElement>("project-select").addEventListener("change", (ev) => {
    const id = (ev.target as HTMLSelectElement).value;
    state.selectedNode = null;
    state.editorKeypoints = null;
    state.regenerating = new Set();
    if (id) void loadProject(id);
  });
  el<HTMLButtonElement>("refresh").addEventListener("click", () => {
    void refreshProjectList();
    if (state.project) void loadProject(state.project.id);
  });
  el<HTMLButtonElement>("job-invert").addEventListener("click", () => void runJob("invert", {}));
  el<HTMLButtonElement>("job-poses").addEventListener("click", () => void runJob("extract_pose", {}));
  el<HTMLButtonElement>("job-generate").addEventListener("click", () => void runJob("generate_level", {}));
  el<HTMLButtonElement>("job-evaluate").addEventListener("click", () => void runJob("evaluate", {}));

  el<HTMLButtonElement>("export").addEventListener("click", () => {
    if (!state.project) return;
    void exportSequence(api, state.project).then((summary) => {
      setStatus(describeExport(summary));
      const link = document.createElement("a");
      link.href = api.exportUrl(state.project!.id);
      link.download = summary.filename;
      link.click();
    }).catch((err) => setStatus(String(err), true));
  });

  const promptInput = el<HTMLTextAreaElement>("prompt-input");
  el<HTMLButtonElement>("prompt-submit").addEventListener("click", () => {
    const project = state.project;
    if (!project || state.selectedNode === null) return;
    const problems = validatePrompt(promptInput.value);
    if (problems.length > 0) {
      setStatus(problems.join("; "), true);
      return; // rejected client-side, no API call
    }
    const node = state.selectedNode;
    const revision = project.tree?.nodes[node]?.revision ?? 0;
    void submitPromptOverride(api, project.id, node, promptInput.value, revision, crypto.randomUUID())
      .then((response) => {
        state.regenerating = regeneratingSet(node, response.affected);
        renderTree();
        return trackJob(response.job);
      })
      .catch((err) => setStatus(String(err), true));
  });

  const canvas = el<HTMLCanvasElement>("pose-canvas");
  canvas.addEventListener("pointerdown", (ev) => {
    if (!state.editorKeypoints) return;
    const unit = canvasToUnit(ev.clientX, ev.clientY, canvas.getBoundingClientRect());
    state.draggingJoint = nearestJoint(state.editorKeypoints, unit.x, unit.y);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!state.editorKeypoints || !state.draggingJoint) return;
    const unit = canvasToUnit(ev.clientX, ev.clientY, canvas.getBoundingClientRect());
    state.editorKeypoints = moveJoint(state.editorKeypoints, state.draggingJoint, unit.x, unit.y);
    drawSkeleton(canvas, state.editorKeypoints);
  });
  canvas.addEventListener("pointerup", () => {
    state.draggingJoint = null;
  });

  el<HTMLButtonElement>("pose-submit").addEventListener("click", () => {
    const project = state.project;
    if (!project || state.selectedNode === null || !state.editorKeypoints) return;
    const node = state.selectedNode;
    const revision = project.tree?.nodes[node]?.revision ?? 0;
    void submitPoseOverride(api, project.id, node, state.editorKeypoints, revision, crypto.randomUUID())
      .then((response) => {
        state.regenerating = regeneratingSet(node, response.affected);
        renderTree();
        return trackJob(response.job);
      })
      .catch((err) => setStatus(String(err), true));
  });
  el<HTMLButtonElement>("pose-reset").addEventListener("click", () => {
    state.editorKeypoints = nodeSkeleton();
    drawSkeleton(canvas, state.editorKeypoints);
  });

  el<HTMLFormElement>("create-form").addEventListener("submit", (ev) => {
    ev.preventDefault();
    const form = new FormData(ev.target as HTMLFormElement);
    void api.createProject(form)
      .then(async (project) => {
        await refreshProjectList();
        el<HTMLSelectElement>("project-select").value = project.id;
        await loadProject(project.id);
        setStatus(`created ${project.id}`);
      })
      .catch((err) => setStatus(String(err), true));
  });
}

async function start() {
  wireEvents();
  await refreshProjectList();
  setStatus("ready");
}

void start();
