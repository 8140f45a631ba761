"""HTTP service: project lifecycle, job queue, candidate steering, exports.

All generation runs through the job queue; request handlers only read state or
record mutations, so the API never blocks on model inference. Mutations are
idempotent by request id and guarded per node by optimistic revisions (stale
writers get 409).
"""

from __future__ import annotations

import io
import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, Response, UploadFile
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .. import pipeline
from ..images import from_uint8
from ..jobs import Job, JobQueue
from ..pose import skeleton_from_json
from ..store import Project, ProjectStore, tree_from_dict
from ..tree import GenerationConfig
from . import schemas

DEFAULT_BACKEND = "toy"


def merge_job_save(current: Project, job_copy: Project, base_revisions: dict) -> Project:
    """Fold a finished job's outputs into the latest project state.

    Handlers own selections, overrides, revisions, and the request ledger;
    jobs own generated artifacts. A node whose revision moved while the job
    ran keeps its current record: the mutation that bumped it enqueued a
    follow-up job that will rebuild the node consistently.
    """
    current.tree = job_copy.tree
    current.embeddings = dict(job_copy.embeddings)
    for key, rel in job_copy.poses.items():
        if not key.startswith("node_"):  # node poses are user overrides
            current.poses[key] = rel
    for key, record in job_copy.candidates.items():
        if current.revision(int(key)) == base_revisions.get(key, 0):
            current.candidates[key] = record
    return current


class _JobStore:
    """Store proxy for job execution: project saves merge under the lock."""

    def __init__(self, store: ProjectStore, lock: threading.Lock, base_revisions: dict):
        self._store = store
        self._lock = lock
        self._base_revisions = base_revisions

    def __getattr__(self, name):
        return getattr(self._store, name)

    def save(self, project: Project) -> None:
        with self._lock:
            try:
                current = self._store.load(project.id)
            except FileNotFoundError:
                self._store.save(project)
                return
            self._store.save(merge_job_save(current, project, self._base_revisions))


class ServiceState:
    def __init__(self, root: str | Path, backend_name: str, image_size: tuple[int, int]):
        self.store = ProjectStore(root)
        self.backend_name = backend_name
        self.image_size = image_size
        self.queue = JobQueue(self._execute)
        self._project_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def lock(self, project_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._project_locks.setdefault(project_id, threading.Lock())

    def _execute(self, job: Job) -> Optional[dict]:
        # Jobs are the only writers to the frame store. Mutations may land in
        # project.json while a job runs, so job saves go through the merge.
        lock = self.lock(job.project_id)
        with lock:
            project = self.store.load(job.project_id)
            base_revisions = dict(project.node_revisions)
        store = _JobStore(self.store, lock, base_revisions)
        progress = job.set_progress
        if job.kind == "invert":
            pipeline.invert_project(store, project, progress=progress)
            return {"embeddings": sorted(project.embeddings)}
        if job.kind == "extract_pose":
            found = pipeline.extract_project_poses(store, project, progress=progress)
            return {"found": found}
        if job.kind == "generate_level":
            level = job.params.get("level")
            seq = pipeline.generate_project(
                store, project, up_to_level=level, progress=progress
            )
            return {"complete": seq.complete}
        if job.kind == "regenerate_subtree":
            return pipeline.regenerate_subtree(
                store, project, int(job.params["node"]), progress=progress
            )
        if job.kind == "evaluate":
            report = pipeline.evaluate_project(store, project)
            return {"report": report}
        raise ValueError(f"unhandled job kind {job.kind}")


def _decode_upload(data: bytes, size: tuple[int, int]) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    h, w = size
    if img.size != (w, h):
        img = img.resize((w, h), Image.BILINEAR)
    return from_uint8(np.asarray(img))


def create_app(
    root: str | Path,
    backend_name: str = DEFAULT_BACKEND,
    image_size: tuple[int, int] = (32, 32),
    frontend_dist: Optional[str | Path] = None,
    start_worker: bool = True,
) -> FastAPI:
    state = ServiceState(root, backend_name, image_size)
    app = FastAPI(title="difftween", version="0.1.0")
    app.state.service = state
    if start_worker:
        state.queue.start()

    store = state.store

    def load_project(project_id: str) -> Project:
        try:
            return store.load(project_id)
        except FileNotFoundError:
            raise HTTPException(404, f"unknown project {project_id}")

    def project_model(project: Project) -> schemas.ProjectModel:
        frames = []
        for i in range(project.config.num_frames + 1):
            available = store.frame_path(project, i).is_file()
            frames.append(
                schemas.FrameModel(
                    index=i,
                    available=available,
                    url=f"/api/projects/{project.id}/frames/{i}.png" if available else None,
                )
            )
        tree_model = None
        if project.tree is not None:
            nodes = {}
            for key, spec in project.tree["nodes"].items():
                record = project.candidates.get(key, {})
                nodes[key] = schemas.NodeModel(
                    index=int(key),
                    revision=project.revision(int(key)),
                    selected=record.get("selected"),
                    selection_source=record.get("selection_source"),
                    num_candidates=len(record.get("entries", [])),
                    **spec,
                )
            tree_model = schemas.TreeModel(
                num_frames=project.tree["num_frames"],
                timesteps=list(project.tree["timesteps"]),
                nodes=nodes,
            )
        return schemas.ProjectModel(
            id=project.id,
            backend=project.backend_name,
            image_size=list(project.image_size),
            prompt=project.prompt,
            negative_prompt=project.negative_prompt,
            ranking_prompts=list(project.ranking_prompts),
            config=schemas.ConfigModel(
                **{
                    k: v
                    for k, v in project.config.__dict__.items()
                    if k in schemas.ConfigModel.model_fields
                }
            ),
            tree=tree_model,
            frames=frames,
            has_embeddings=bool(project.embeddings),
            poses={key: store.load_skeleton(project, key) for key in project.poses},
        )

    def job_model(job: Job) -> schemas.JobModel:
        return schemas.JobModel(**job.snapshot())

    def replay_or_run(project: Project, request_id: Optional[str], action):
        """Idempotency: a request id seen before returns the recorded response."""
        if request_id and request_id in project.requests:
            stored = dict(project.requests[request_id])
            stored["replayed"] = True
            return stored
        response = action()
        if request_id:
            project.requests[request_id] = response
            store.save(project)
        return response

    def node_in_tree(project: Project, node_index: int):
        if project.tree is None:
            raise HTTPException(404, "project has no tree yet; generate first")
        if str(node_index) not in project.tree["nodes"]:
            raise HTTPException(404, f"no interior node {node_index}")

    def check_revision(project: Project, node_index: int, base_revision: int):
        current = project.revision(node_index)
        if base_revision != current:
            raise HTTPException(
                409,
                f"node {node_index} is at revision {current}, request based on {base_revision}",
            )

    def enqueue_regen(project: Project, node_index: int) -> tuple[Job, list[int]]:
        job = state.queue.submit(
            Job(kind="regenerate_subtree", project_id=project.id, params={"node": node_index})
        )
        affected = sorted(tree_from_dict(project.tree).descendants(node_index))
        return job, affected

    # -- projects ---------------------------------------------------------------

    @app.post("/api/projects", response_model=schemas.ProjectModel)
    async def create_project(
        image_a: UploadFile = File(...),
        image_b: UploadFile = File(...),
        prompt: str = Form(""),
        negative_prompt: str = Form(""),
        ranking_positive: str = Form("high quality, detailed, 2D"),
        ranking_negative: str = Form("blurry, distorted, 3D render"),
        frames: int = Form(8),
        scheme: str = Form("ours"),
        candidates: int = Form(4),
        seed: int = Form(0),
        steps: int = Form(1000),
        substeps: int = Form(25),
        t_min: float = Form(0.25),
        t_max: float = Form(0.65),
        guidance_scale: float = Form(7.5),
        use_pose: bool = Form(True),
        backend: Optional[str] = Form(None),
        project_id: Optional[str] = Form(None),
    ):
        config = GenerationConfig(
            scheme=scheme,
            num_frames=frames,
            t_min_frac=t_min,
            t_max_frac=t_max,
            num_candidates=candidates,
            global_seed=seed,
            substeps=substeps,
            num_steps=steps,
            guidance_scale=guidance_scale,
            use_pose=use_pose,
        )
        try:
            config.validate()
            img_a = _decode_upload(await image_a.read(), state.image_size)
            img_b = _decode_upload(await image_b.read(), state.image_size)
            project = store.create(
                img_a,
                img_b,
                project_id=project_id,
                backend_name=backend or state.backend_name,
                image_size=state.image_size,
                prompt=prompt,
                negative_prompt=negative_prompt,
                ranking_prompts=(ranking_positive, ranking_negative),
                config=config,
            )
        except (ValueError, FileExistsError) as exc:
            raise HTTPException(422, str(exc))
        return project_model(project)

    @app.get("/api/projects", response_model=list[schemas.ProjectSummary])
    def list_projects():
        out = []
        for pid in store.list_projects():
            project = store.load(pid)
            out.append(
                schemas.ProjectSummary(
                    id=pid, scheme=project.config.scheme, num_frames=project.config.num_frames
                )
            )
        return out

    @app.get("/api/projects/{project_id}", response_model=schemas.ProjectModel)
    def get_project(project_id: str):
        return project_model(load_project(project_id))

    # -- jobs --------------------------------------------------------------------

    @app.post("/api/projects/{project_id}/jobs", response_model=schemas.JobModel)
    def enqueue_job(project_id: str, request: schemas.JobRequest):
        with state.lock(project_id):
            project = load_project(project_id)
            try:
                job_probe = Job(kind=request.kind, project_id=project_id, params=request.params)
            except ValueError as exc:
                raise HTTPException(422, str(exc))

            def action():
                job = state.queue.submit(job_probe)
                return {"job_id": job.id}

            response = replay_or_run(project, request.request_id, action)
        return job_model(state.queue.get(response["job_id"]))

    @app.get("/api/jobs/{job_id}", response_model=schemas.JobModel)
    def get_job(job_id: str):
        try:
            return job_model(state.queue.get(job_id))
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id}")

    # -- candidates and steering ---------------------------------------------------

    @app.get(
        "/api/projects/{project_id}/nodes/{node_index}/candidates",
        response_model=schemas.CandidateSetModel,
    )
    def get_candidates(project_id: str, node_index: int):
        project = load_project(project_id)
        node_in_tree(project, node_index)
        record = project.candidates.get(str(node_index), {})
        cands = [
            schemas.CandidateModel(
                candidate_id=entry["id"],
                positive_score=entry.get("positive_score"),
                negative_score=entry.get("negative_score"),
                net_score=entry.get("net_score"),
                image_url=(
                    f"/api/projects/{project_id}/candidates/{node_index}/{entry['id']}.png"
                ),
            )
            for entry in record.get("entries", [])
        ]
        return schemas.CandidateSetModel(
            node_index=node_index,
            revision=project.revision(node_index),
            selected=record.get("selected"),
            selection_source=record.get("selection_source"),
            candidates=cands,
        )

    @app.post(
        "/api/projects/{project_id}/nodes/{node_index}/selection",
        response_model=schemas.MutationResponse,
    )
    def select_candidate(project_id: str, node_index: int, request: schemas.SelectionRequest):
        with state.lock(project_id):
            project = load_project(project_id)
            node_in_tree(project, node_index)
            record = project.candidates.get(str(node_index))
            if record is None:
                raise HTTPException(404, f"node {node_index} has no candidates yet")
            if request.candidate_id not in [e["id"] for e in record["entries"]]:
                raise HTTPException(404, f"node {node_index} has no candidate {request.candidate_id}")

            def action():
                check_revision(project, node_index, request.base_revision)
                record["selected"] = request.candidate_id
                record["selection_source"] = "user"
                revision = project.bump_revision(node_index)
                store.save(project)
                job, affected = enqueue_regen(project, node_index)
                return {
                    "project_id": project.id,
                    "node_index": node_index,
                    "revision": revision,
                    "affected": affected,
                    "job": job.snapshot(),
                }

            response = replay_or_run(project, request.request_id, action)
        response["job"] = state.queue.get(response["job"]["id"]).snapshot()
        return schemas.MutationResponse(**response)

    @app.post(
        "/api/projects/{project_id}/nodes/{node_index}/prompt",
        response_model=schemas.MutationResponse,
    )
    def override_prompt(project_id: str, node_index: int, request: schemas.PromptOverrideRequest):
        with state.lock(project_id):
            project = load_project(project_id)
            node_in_tree(project, node_index)

            def action():
                check_revision(project, node_index, request.base_revision)
                project.prompt_overrides[str(node_index)] = request.prompt
                revision = project.bump_revision(node_index)
                store.save(project)
                job, affected = enqueue_regen(project, node_index)
                return {
                    "project_id": project.id,
                    "node_index": node_index,
                    "revision": revision,
                    "affected": sorted({node_index, *affected}),
                    "job": job.snapshot(),
                }

            response = replay_or_run(project, request.request_id, action)
        response["job"] = state.queue.get(response["job"]["id"]).snapshot()
        return schemas.MutationResponse(**response)

    @app.post(
        "/api/projects/{project_id}/nodes/{node_index}/pose",
        response_model=schemas.MutationResponse,
    )
    def override_pose(project_id: str, node_index: int, request: schemas.PoseOverrideRequest):
        with state.lock(project_id):
            project = load_project(project_id)
            node_in_tree(project, node_index)
            skeleton_json = {
                "source": "user_override",
                "keypoints": {
                    name: {"x": kp.x, "y": kp.y, "confidence": kp.confidence}
                    for name, kp in request.keypoints.items()
                },
            }
            try:
                skeleton_from_json(skeleton_json)
            except ValueError as exc:
                raise HTTPException(422, str(exc))

            def action():
                check_revision(project, node_index, request.base_revision)
                store.save_skeleton(project, f"node_{node_index}", skeleton_json)
                revision = project.bump_revision(node_index)
                store.save(project)
                job, affected = enqueue_regen(project, node_index)
                return {
                    "project_id": project.id,
                    "node_index": node_index,
                    "revision": revision,
                    "affected": sorted({node_index, *affected}),
                    "job": job.snapshot(),
                }

            response = replay_or_run(project, request.request_id, action)
        response["job"] = state.queue.get(response["job"]["id"]).snapshot()
        return schemas.MutationResponse(**response)

    # -- artifacts -------------------------------------------------------------------

    @app.get("/api/projects/{project_id}/frames/{index}.png")
    def get_frame(project_id: str, index: int):
        project = load_project(project_id)
        path = store.frame_path(project, index)
        if not path.is_file():
            raise HTTPException(404, f"frame {index} not generated yet")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/api/projects/{project_id}/candidates/{node_index}/{candidate_id}.png")
    def get_candidate_image(project_id: str, node_index: int, candidate_id: int):
        project = load_project(project_id)
        path = store.candidate_image_path(project, node_index, candidate_id)
        if not path.is_file():
            raise HTTPException(404, "no such candidate image")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/api/projects/{project_id}/export.zip")
    def export_zip(project_id: str):
        project = load_project(project_id)
        try:
            blob = store.export_zip(project)
        except FileNotFoundError as exc:
            raise HTTPException(404, str(exc))
        return Response(
            content=blob,
            media_type="application/zip",
            headers={"Content-Disposition": f'attachment; filename="{project_id}.zip"'},
        )

    if frontend_dist is not None and Path(frontend_dist).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dist, html=True), name="ui")

    return app
