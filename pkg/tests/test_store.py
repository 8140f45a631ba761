import hashlib
import json
import struct
import zipfile
from io import BytesIO

import numpy as np
import pytest

from difftween import GenerationConfig, Latent
from difftween.inversion import InversionConfig
from difftween.pipeline import (
    build_provider,
    evaluate_project,
    extract_project_poses,
    generate_project,
    invert_project,
    make_runtime,
    regenerate_subtree,
)
from difftween.pose import Keypoint, PoseSkeleton, render_pose, skeleton_to_json
from difftween.ranking import Candidate, CandidateSet
from difftween.store import (
    LATENT_MAGIC,
    Project,
    ProjectStore,
    read_latent,
    write_latent,
)

from conftest import random_image

SIZE = (8, 8)


def make_project(store, seed=0, **config_kw):
    defaults = dict(
        scheme="ours", num_frames=4, num_candidates=2, global_seed=seed,
        substeps=2, num_steps=200, use_pose=False, guidance_scale=1.0,
    )
    defaults.update(config_kw)
    return store.create(
        random_image(seed, SIZE),
        random_image(seed + 1000, SIZE),
        backend_name="toy-gaussian",
        image_size=SIZE,
        prompt="a test subject",
        config=GenerationConfig(**defaults),
    )


def tree_hash(root):
    digest = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            digest.update(p.name.encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()


class TestLatentCache:
    def test_header_layout(self, tmp_path):
        z = Latent(np.random.default_rng(0).standard_normal((3, 4, 5)))
        path = tmp_path / "z.lat"
        write_latent(path, z)
        raw = path.read_bytes()
        assert raw[:4] == LATENT_MAGIC
        assert struct.unpack("<III", raw[4:16]) == (3, 4, 5)
        assert len(raw) == 16 + 3 * 4 * 5 * 4  # header + float32 payload

    def test_round_trip_is_float32_exact(self, tmp_path):
        z = Latent(np.random.default_rng(1).standard_normal((2, 3, 3)))
        path = tmp_path / "z.lat"
        write_latent(path, z)
        back = read_latent(path)
        np.testing.assert_array_equal(back.data, z.data.astype(np.float32).astype(np.float64))
        assert back.timestep == 0

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.lat"
        path.write_bytes(b"NOPE" + b"\0" * 28)
        with pytest.raises(ValueError):
            read_latent(path)

    def test_rewrite_identical_bytes_keeps_mtime(self, tmp_path):
        z = Latent(np.ones((1, 2, 2)))
        path = tmp_path / "z.lat"
        write_latent(path, z)
        first = path.stat().st_mtime_ns
        write_latent(path, z)
        assert path.stat().st_mtime_ns == first


class TestProjectRoundTrip:
    def test_save_load_equality(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=3)
        project.inversion = InversionConfig(iterations=50, seed=9)
        project.prompt_overrides["2"] = "another prompt"
        project.node_revisions["2"] = 4
        project.requests["req-1"] = {"ok": True}
        store.save(project)
        loaded = store.load(project.id)
        assert loaded.to_dict() == project.to_dict()
        assert loaded == project

    def test_weights_and_motion_survive(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(
            store, seed=4,
            interpolation_weights=(0.0, 0.1, 0.5, 0.9, 1.0),
            motion={"kind": "zoom", "factor": 2.0},
        )
        loaded = store.load(project.id)
        assert loaded.config.interpolation_weights == (0.0, 0.1, 0.5, 0.9, 1.0)
        assert loaded.config.motion == {"kind": "zoom", "factor": 2.0}

    def test_duplicate_create_rejected(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=5)
        with pytest.raises(FileExistsError):
            store.create(random_image(0, SIZE), random_image(1, SIZE), project_id=project.id)

    def test_list_projects(self, tmp_path):
        store = ProjectStore(tmp_path)
        a = make_project(store, seed=6)
        b = make_project(store, seed=7)
        assert store.list_projects() == sorted([a.id, b.id])

    def test_missing_project(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ProjectStore(tmp_path).load("nothere")


class TestNodeCache:
    def test_store_lookup_round_trip(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=8)
        cache = store.node_cache(project)
        cands = CandidateSet(node_index=2, selected=1, selection_source="user")
        rng = np.random.default_rng(2)
        for cid in range(2):
            cands.candidates.append(
                Candidate(
                    candidate_id=cid,
                    image=rng.random((*SIZE, 3)),
                    latent=Latent(rng.standard_normal((3, *SIZE)).astype(np.float32).astype(np.float64)),
                    positive_score=0.5, negative_score=0.1, net_score=0.4,
                )
            )
        cache.store(2, "fp-abc", cands)
        hit = cache.lookup(2, "fp-abc")
        assert hit is not None
        assert hit.selected == 1 and hit.selection_source == "user"
        np.testing.assert_array_equal(
            hit.candidates[1].latent.data, cands.candidates[1].latent.data
        )
        assert cache.lookup(2, "fp-other") is None
        assert cache.lookup(3, "fp-abc") is None

    def test_missing_latent_file_misses(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=9)
        cache = store.node_cache(project)
        cands = CandidateSet(node_index=1, selected=0)
        cands.candidates.append(
            Candidate(candidate_id=0, latent=Latent(np.zeros((3, *SIZE))))
        )
        cache.store(1, "fp", cands)
        store.path(project, "candidates/node_0001/cand_00.lat").unlink()
        assert cache.lookup(1, "fp") is None


class TestPipeline:
    def test_generate_writes_all_artifacts(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=10)
        seq = generate_project(store, project)
        assert seq.complete
        for i in range(5):
            assert store.frame_path(project, i).is_file()
            assert store.path(project, "latents", f"frame_{i:04d}.lat").is_file()
        assert store.path(project, "candidates", "node_0002", "cand_00.png").is_file()
        loaded = store.load(project.id)
        assert loaded.tree is not None
        assert set(loaded.candidates) == {"1", "2", "3"}

    def test_resume_regenerates_nothing(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=11)
        generate_project(store, project)
        root = store.path(project)
        before = tree_hash(root)
        mtimes = {p: p.stat().st_mtime_ns for p in root.rglob("*") if p.is_file()}
        project2 = store.load(project.id)
        generate_project(store, project2)
        assert tree_hash(root) == before
        for p, t in mtimes.items():
            assert p.stat().st_mtime_ns == t, f"{p} was rewritten"

    def test_partial_then_full_run_resumes(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=12)
        partial = generate_project(store, project, up_to_level=0)
        assert not partial.complete
        assert partial.latents[2] is not None and partial.latents[1] is None
        root_cand = store.path(project, "candidates", "node_0002", "cand_00.lat")
        stamp = root_cand.stat().st_mtime_ns
        full = generate_project(store, store.load(project.id))
        assert full.complete
        assert root_cand.stat().st_mtime_ns == stamp  # level 0 came from cache
        fresh = ProjectStore(tmp_path / "fresh")
        clean = make_project(fresh, seed=12)
        direct = generate_project(fresh, clean)
        for a, b in zip(full.latents, direct.latents):
            np.testing.assert_array_equal(a.data, b.data)

    def test_selection_persists_and_localizes_changes(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=13, num_frames=8)
        generate_project(store, project)
        frames_before = {
            i: store.frame_path(project, i).read_bytes() for i in range(9)
        }
        record = project.candidates["2"]
        record["selected"] = 1 - record["selected"]
        record["selection_source"] = "user"
        store.save(project)
        regenerate_subtree(store, project, 2)
        changed = {i for i in range(9) if store.frame_path(project, i).read_bytes() != frames_before[i]}
        assert changed == {1, 2, 3}

    def test_inversion_improves_embeddings_and_is_used(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=14)
        project.inversion = InversionConfig(iterations=20, learning_rate=3e-4, seed=1)
        invert_project(store, project)
        assert set(project.embeddings) == {"positive_a", "positive_b", "negative"}
        schedule, backend = make_runtime(project)
        provider = build_provider(store, project, backend)
        assert not np.array_equal(provider.positive_a, provider.positive_b)
        plain = build_provider(store, Project(id="x", image_size=SIZE, prompt="a test subject"), backend)
        assert not np.array_equal(provider.positive_a, plain.positive_a)

    def test_pose_extraction_persists_skeletons(self, tmp_path):
        store = ProjectStore(tmp_path)
        pose_img_a = render_pose(
            PoseSkeleton(keypoints={"nose": Keypoint("nose", 0.3, 0.3), "neck": Keypoint("neck", 0.3, 0.6)}),
            (64, 64),
        )
        pose_img_b = render_pose(
            PoseSkeleton(keypoints={"nose": Keypoint("nose", 0.7, 0.4), "neck": Keypoint("neck", 0.7, 0.7)}),
            (64, 64),
        )
        project = store.create(
            pose_img_a, pose_img_b,
            backend_name="toy-gaussian", image_size=(64, 64), prompt="p",
            config=GenerationConfig(num_frames=2, num_candidates=1, substeps=2,
                                    num_steps=200, use_pose=True, guidance_scale=1.0),
        )
        found = extract_project_poses(store, project)
        assert found == {"input_a": "detected", "input_b": "detected"}
        assert store.load_skeleton(project, "input_a")["keypoints"]["nose"]["x"] == pytest.approx(0.3, abs=0.05)
        schedule, backend = make_runtime(project)
        provider = build_provider(store, project, backend)
        assert provider.bundle_for(0.5, None).pose_image is not None

    def test_evaluate_writes_report(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=15)
        generate_project(store, project)
        report = evaluate_project(store, project)
        assert store.path(project, "report.json").is_file()
        assert report["rows"][0]["scheme"] == "ours"
        assert np.isfinite(report["rows"][0]["fid"])

    def test_evaluate_incomplete_rejected(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=16)
        with pytest.raises(ValueError, match="incomplete"):
            evaluate_project(store, project)


class TestExportZip:
    def test_ordered_and_deterministic(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=17, num_frames=16, num_candidates=1)
        generate_project(store, project)
        blob = store.export_zip(project)
        with zipfile.ZipFile(BytesIO(blob)) as zf:
            names = zf.namelist()
        assert len(names) == 17
        assert names == sorted(names)
        assert names[0] == "frame_0000.png" and names[-1] == "frame_0016.png"
        assert store.export_zip(project) == blob

    def test_empty_project_rejected(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=18)
        with pytest.raises(FileNotFoundError):
            store.export_zip(project)


class TestSkeletonStorage:
    def test_round_trip(self, tmp_path):
        store = ProjectStore(tmp_path)
        project = make_project(store, seed=19)
        payload = skeleton_to_json(
            PoseSkeleton(keypoints={"nose": Keypoint("nose", 0.5, 0.25, 0.9)}, source="user_override")
        )
        store.save_skeleton(project, "node_2", payload)
        assert store.load_skeleton(project, "node_2") == payload
        assert project.poses["node_2"] == "poses/node_2.json"
