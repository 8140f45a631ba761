"""Project persistence: a plain directory of JSON and PNG, inspectable and
diff-able, with raw float32 latent caches.

Layout per project:

    project.json                   all metadata, tree, candidate records
    inputs/a.png, inputs/b.png
    frames/frame_0000.png          finalized frames in index order
    latents/frame_0000.lat         finalized clean latents
    candidates/node_0001/cand_00.{png,lat}
    poses/*.json                   skeletons and overrides
    embeddings/*.emb               inverted prompt embeddings
    report.json                    metric report, when evaluated

Latent caches are little-endian float32 with a 16-byte header: 4 magic bytes
and three uint32 dims. Candidate records carry a fingerprint chained through
the node's parents, which is what makes crash-resume and subtree-preserving
regeneration cheap.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .diffusion import Latent
from .generate import FrameSequence
from .images import load_image, save_image
from .inversion import InversionConfig
from .ranking import Candidate, CandidateSet
from .tree import FrameNode, GenerationConfig, InterpolationTree

LATENT_MAGIC = b"DTLA"


def write_latent(path: str | Path, z: Latent) -> None:
    data = np.ascontiguousarray(z.data, dtype="<f4")
    c, h, w = data.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = LATENT_MAGIC + struct.pack("<III", c, h, w) + data.tobytes()
    _write_if_changed(path, payload)


def read_latent(path: str | Path) -> Latent:
    raw = Path(path).read_bytes()
    if raw[:4] != LATENT_MAGIC:
        raise ValueError(f"{path} is not a latent cache (bad magic {raw[:4]!r})")
    c, h, w = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw[16:], dtype="<f4").reshape(c, h, w)
    return Latent(data=data.astype(np.float64), timestep=0)


def write_embedding(path: str | Path, emb: np.ndarray) -> None:
    arr = np.asarray(emb)
    shaped = arr.reshape((1,) * (3 - arr.ndim) + arr.shape) if arr.ndim < 3 else arr
    write_latent(path, Latent(shaped.astype(np.float64)))


def read_embedding(path: str | Path, shape: tuple) -> np.ndarray:
    return read_latent(path).data.reshape(shape)


def _write_if_changed(path: Path, payload: bytes) -> None:
    # Identical bytes are not rewritten, so resumed runs leave mtimes alone.
    if path.exists() and path.read_bytes() == payload:
        return
    path.write_bytes(payload)


def tree_to_dict(tree: InterpolationTree) -> dict:
    return {
        "num_frames": tree.num_frames,
        "timesteps": list(tree.timesteps),
        "scheme": tree.scheme,
        "nodes": {
            str(i): {
                "parent_lo": n.parent_lo,
                "parent_hi": n.parent_hi,
                "timestep": n.timestep,
                "level": n.level,
                "weight": n.weight,
            }
            for i, n in sorted(tree.nodes.items())
        },
    }


def tree_from_dict(obj: dict) -> InterpolationTree:
    nodes = {
        int(i): FrameNode(index=int(i), **spec) for i, spec in obj["nodes"].items()
    }
    tree = InterpolationTree(
        num_frames=obj["num_frames"],
        timesteps=tuple(obj["timesteps"]),
        nodes=nodes,
        scheme=obj.get("scheme", "ours"),
    )
    tree.validate()
    return tree


@dataclass
class Project:
    """Everything a generation run needs, minus the pixel data."""

    id: str
    backend_name: str = "toy"
    image_size: tuple = (32, 32)
    image_a: str = "inputs/a.png"
    image_b: str = "inputs/b.png"
    prompt: str = ""
    negative_prompt: str = ""
    ranking_prompts: tuple = ("high quality, detailed, 2D", "blurry, distorted, 3D render")
    config: GenerationConfig = field(default_factory=GenerationConfig)
    inversion: Optional[InversionConfig] = None
    embeddings: dict = field(default_factory=dict)  # name -> relative path
    poses: dict = field(default_factory=dict)  # key -> relative path
    prompt_overrides: dict = field(default_factory=dict)  # node index (str) -> prompt text
    tree: Optional[dict] = None
    candidates: dict = field(default_factory=dict)  # node index (str) -> record
    node_revisions: dict = field(default_factory=dict)
    requests: dict = field(default_factory=dict)  # request id -> stored response

    def validate(self) -> None:
        self.config.validate(enforce_min_steps=False)
        if self.tree is not None:
            tree_from_dict(self.tree)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["image_size"] = list(self.image_size)
        out["ranking_prompts"] = list(self.ranking_prompts)
        out["config"] = dataclasses.asdict(self.config)
        if self.config.interpolation_weights is not None:
            out["config"]["interpolation_weights"] = list(self.config.interpolation_weights)
        out["inversion"] = None if self.inversion is None else dataclasses.asdict(self.inversion)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Project":
        obj = dict(obj)
        cfg = dict(obj["config"])
        if cfg.get("interpolation_weights") is not None:
            cfg["interpolation_weights"] = tuple(cfg["interpolation_weights"])
        if cfg.get("motion") is not None:
            cfg["motion"] = dict(cfg["motion"])
        obj["config"] = GenerationConfig(**cfg)
        obj["image_size"] = tuple(obj["image_size"])
        obj["ranking_prompts"] = tuple(obj["ranking_prompts"])
        inv = obj.get("inversion")
        obj["inversion"] = None if inv is None else InversionConfig(**inv)
        return cls(**obj)

    def revision(self, node_index: int) -> int:
        return int(self.node_revisions.get(str(node_index), 0))

    def bump_revision(self, node_index: int) -> int:
        rev = self.revision(node_index) + 1
        self.node_revisions[str(node_index)] = rev
        return rev


class ProjectStore:
    """Directory-backed store for projects and their artifacts."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, project: Project | str, *parts: str) -> Path:
        pid = project if isinstance(project, str) else project.id
        return self.root / pid / Path(*parts) if parts else self.root / pid

    def list_projects(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "project.json").is_file())

    def exists(self, project_id: str) -> bool:
        return self.path(project_id, "project.json").is_file()

    def create(
        self,
        image_a: np.ndarray,
        image_b: np.ndarray,
        project_id: Optional[str] = None,
        **fields,
    ) -> Project:
        pid = project_id or uuid.uuid4().hex[:12]
        if self.exists(pid):
            raise FileExistsError(f"project {pid} already exists")
        project = Project(id=pid, **fields)
        project.validate()
        save_image(self.path(project, project.image_a), image_a)
        save_image(self.path(project, project.image_b), image_b)
        self.save(project)
        return project

    def save(self, project: Project) -> None:
        path = self.path(project, "project.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(project.to_dict(), indent=2, sort_keys=True).encode()
        _write_if_changed(path, payload + b"\n")

    def load(self, project_id: str) -> Project:
        path = self.path(project_id, "project.json")
        if not path.is_file():
            raise FileNotFoundError(f"no project at {path}")
        project = Project.from_dict(json.loads(path.read_text()))
        project.validate()
        return project

    # -- images and latents ----------------------------------------------------

    def load_inputs(self, project: Project) -> tuple[np.ndarray, np.ndarray]:
        return (
            load_image(self.path(project, project.image_a)),
            load_image(self.path(project, project.image_b)),
        )

    def frame_path(self, project: Project, index: int) -> Path:
        return self.path(project, "frames", f"frame_{index:04d}.png")

    def save_frames(self, project: Project, seq: FrameSequence) -> None:
        for i, (frame, latent) in enumerate(zip(seq.frames, seq.latents)):
            if frame is None:
                continue
            save_image(self.frame_path(project, i), frame)
            write_latent(self.path(project, "latents", f"frame_{i:04d}.lat"), latent)

    def load_frame(self, project: Project, index: int) -> np.ndarray:
        return load_image(self.frame_path(project, index))

    # -- candidate records (the node cache) -------------------------------------

    def candidate_image_path(self, project: Project, node_index: int, cid: int) -> Path:
        return self.path(project, "candidates", f"node_{node_index:04d}", f"cand_{cid:02d}.png")

    def node_cache(self, project: Project) -> "StoreNodeCache":
        return StoreNodeCache(self, project)

    # -- poses -------------------------------------------------------------------

    def save_skeleton(self, project: Project, key: str, skeleton_json: dict) -> str:
        rel = f"poses/{key}.json"
        path = self.path(project, rel)
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_if_changed(path, json.dumps(skeleton_json, indent=2, sort_keys=True).encode())
        project.poses[key] = rel
        return rel

    def load_skeleton(self, project: Project, key: str) -> Optional[dict]:
        rel = project.poses.get(key)
        if rel is None:
            return None
        return json.loads(self.path(project, rel).read_text())

    # -- embeddings ---------------------------------------------------------------

    def save_embedding(self, project: Project, name: str, emb: np.ndarray) -> str:
        rel = f"embeddings/{name}.emb"
        write_embedding(self.path(project, rel), emb)
        project.embeddings[name] = rel
        return rel

    def load_embedding(self, project: Project, name: str, shape: tuple) -> Optional[np.ndarray]:
        rel = project.embeddings.get(name)
        if rel is None:
            return None
        return read_embedding(self.path(project, rel), shape)

    # -- reports -------------------------------------------------------------------

    def save_report(self, project: Project, report: dict) -> None:
        path = self.path(project, "report.json")
        _write_if_changed(path, json.dumps(report, indent=2, sort_keys=True).encode() + b"\n")

    def export_zip(self, project: Project) -> bytes:
        """Ordered frames packed into a zip; lexical name order is frame order."""
        import io
        import zipfile

        frame_paths = sorted(self.path(project, "frames").glob("frame_*.png"))
        if not frame_paths:
            raise FileNotFoundError("project has no generated frames to export")
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for p in frame_paths:
                info = zipfile.ZipInfo(p.name)  # fixed date: deterministic bytes
                zf.writestr(info, p.read_bytes())
        return buf.getvalue()


class StoreNodeCache:
    """NodeCache backed by the project's candidates directory.

    A node is reusable only when its recorded fingerprint matches; the
    fingerprint covers the run digest, the node, its selection, and both
    parents' fingerprints.
    """

    def __init__(self, store: ProjectStore, project: Project):
        self._store = store
        self.project = project

    def lookup(self, node_index: int, fingerprint: str) -> Optional[CandidateSet]:
        record = self.project.candidates.get(str(node_index))
        if record is None or record.get("fingerprint") != fingerprint:
            return None
        cands = CandidateSet(
            node_index=node_index,
            selected=record["selected"],
            selection_source=record["selection_source"],
        )
        for entry in record["entries"]:
            latent_path = self._store.path(self.project, entry["latent"])
            if not latent_path.is_file():
                return None
            cands.candidates.append(
                Candidate(
                    candidate_id=entry["id"],
                    latent=read_latent(latent_path),
                    positive_score=entry.get("positive_score"),
                    negative_score=entry.get("negative_score"),
                    net_score=entry.get("net_score"),
                )
            )
        return cands

    def store(self, node_index: int, fingerprint: str, cands: CandidateSet) -> None:
        entries = []
        for cand in cands.candidates:
            rel_png = f"candidates/node_{node_index:04d}/cand_{cand.candidate_id:02d}.png"
            rel_lat = f"candidates/node_{node_index:04d}/cand_{cand.candidate_id:02d}.lat"
            if cand.image is not None:
                save_image(self._store.path(self.project, rel_png), cand.image)
            write_latent(self._store.path(self.project, rel_lat), cand.latent)
            entries.append(
                {
                    "id": cand.candidate_id,
                    "image": rel_png,
                    "latent": rel_lat,
                    "positive_score": cand.positive_score,
                    "negative_score": cand.negative_score,
                    "net_score": cand.net_score,
                }
            )
        self.project.candidates[str(node_index)] = {
            "fingerprint": fingerprint,
            "selected": cands.selected,
            "selection_source": cands.selection_source,
            "entries": entries,
        }
