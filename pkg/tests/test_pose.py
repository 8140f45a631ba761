import numpy as np
import pytest

from difftween import make_schedule
from difftween.backends import ToyBackend
from difftween.pose import (
    JOINT_NAMES,
    LIMBS,
    Keypoint,
    PoseSkeleton,
    detect_rendered_skeleton,
    extract_pose_with_fallback,
    interpolate_pose,
    render_pose,
    shared_keypoints,
    skeleton_from_json,
    skeleton_to_json,
)


def skel(**joints) -> PoseSkeleton:
    kps = {}
    for name, spec in joints.items():
        x, y = spec[0], spec[1]
        conf = spec[2] if len(spec) > 2 else 1.0
        kps[name] = Keypoint(name=name, x=x, y=y, confidence=conf)
    return PoseSkeleton(keypoints=kps)


def grid_skeleton(names=JOINT_NAMES, width=6) -> PoseSkeleton:
    """Joints laid out on a coarse grid so rendered markers never overlap."""
    kps = {}
    for i, name in enumerate(names):
        row, col = divmod(i, width)
        kps[name] = Keypoint(name=name, x=0.1 + col * 0.15, y=0.1 + row * 0.2)
    return PoseSkeleton(keypoints=kps)


class TestSharedKeypoints:
    def test_identical_skeletons(self):
        s = grid_skeleton()
        assert shared_keypoints(s, s, 0.5) == set(JOINT_NAMES)

    def test_disjoint_sets(self):
        a = skel(nose=(0.5, 0.5))
        b = skel(neck=(0.5, 0.5))
        assert shared_keypoints(a, b, 0.0) == set()

    def test_confidence_floor(self):
        a = skel(nose=(0.1, 0.1, 0.9), right_wrist=(0.2, 0.2, 0.3))
        b = skel(nose=(0.3, 0.3, 0.8), right_wrist=(0.4, 0.4, 0.9))
        assert shared_keypoints(a, b, 0.5) == {"nose"}


class TestInterpolatePose:
    def test_u0_matches_a(self):
        a = skel(nose=(0.2, 0.3), neck=(0.4, 0.5))
        b = skel(nose=(0.8, 0.9), neck=(0.6, 0.7))
        out = interpolate_pose(a, b, 0.0)
        for name in out.joints:
            assert out.keypoints[name].x == a.keypoints[name].x
            assert out.keypoints[name].y == a.keypoints[name].y

    def test_midpoint(self):
        a = skel(nose=(0.2, 0.2))
        b = skel(nose=(0.6, 0.4))
        out = interpolate_pose(a, b, 0.5)
        kp = out.keypoints["nose"]
        assert kp.x == pytest.approx(0.4, abs=1e-12)
        assert kp.y == pytest.approx(0.3, abs=1e-12)

    @pytest.mark.parametrize("u", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_symmetry(self, u):
        a = skel(nose=(0.2, 0.2, 0.9), neck=(0.1, 0.8, 0.7))
        b = skel(nose=(0.7, 0.5, 0.8), neck=(0.9, 0.3, 0.95))
        x = interpolate_pose(a, b, u)
        y = interpolate_pose(b, a, 1.0 - u)
        for name in x.joints:
            assert x.keypoints[name] == y.keypoints[name]

    def test_empty_shared_set_absent(self):
        assert interpolate_pose(skel(nose=(0.5, 0.5)), skel(neck=(0.5, 0.5)), 0.5) is None

    def test_output_subset_of_shared(self):
        a = skel(nose=(0.1, 0.1, 0.9), neck=(0.2, 0.2, 0.2), left_hip=(0.3, 0.3, 0.9))
        b = skel(nose=(0.5, 0.5, 0.9), neck=(0.6, 0.6, 0.9))
        out = interpolate_pose(a, b, 0.5, conf_floor=0.4)
        assert out.joints <= shared_keypoints(a, b, 0.4)
        assert out.joints == {"nose"}

    def test_confidence_is_min(self):
        a = skel(nose=(0.1, 0.1, 0.9))
        b = skel(nose=(0.5, 0.5, 0.6))
        assert interpolate_pose(a, b, 0.5).keypoints["nose"].confidence == 0.6


class TestRenderPose:
    def test_single_keypoint_marker_only(self):
        s = skel(nose=(0.5, 0.5))
        img = render_pose(s, (64, 64))
        lit = np.any(img > 0, axis=-1)
        assert lit.sum() == 25  # one 5x5 marker, zero limbs
        assert img.shape == (64, 64, 3)

    def test_full_skeleton_limb_count(self):
        # The canonical limb graph has 17 edges covering all 18 joints.
        assert len(LIMBS) == 17
        assert {j for edge in LIMBS for j in edge} == set(JOINT_NAMES)
        for a, b in LIMBS:
            assert a in JOINT_NAMES and b in JOINT_NAMES

    def test_deterministic(self):
        s = grid_skeleton()
        assert np.array_equal(render_pose(s, (64, 64)), render_pose(s, (64, 64)))

    def test_coordinates_stay_in_bounds(self):
        s = skel(nose=(0.0, 0.0), neck=(1.0, 1.0))
        img = render_pose(s, (32, 32))
        assert img.shape == (32, 32, 3)
        assert np.all(np.isfinite(img))

    def test_empty_skeleton_rejected(self):
        with pytest.raises(ValueError):
            render_pose(PoseSkeleton(), (32, 32))


class TestDetector:
    def test_recovers_rendered_joints_within_2px(self):
        s = grid_skeleton()
        img = render_pose(s, (96, 96))
        found = detect_rendered_skeleton(img)
        assert found is not None
        assert found.joints == set(JOINT_NAMES)
        for name, kp in found.keypoints.items():
            ref = s.keypoints[name]
            assert abs(kp.x - ref.x) * 95 <= 2.0
            assert abs(kp.y - ref.y) * 95 <= 2.0

    def test_blank_absent(self):
        assert detect_rendered_skeleton(np.zeros((64, 64, 3))) is None

    def test_dimmed_markers_rejected(self):
        img = render_pose(grid_skeleton(), (96, 96)) * 0.4
        assert detect_rendered_skeleton(img) is None


class TestFallback:
    def make_backend(self, atlas=None):
        sched = make_schedule(200)
        return ToyBackend(sched, image_size=(96, 96), tau=0.0, prompt_atlas=atlas), sched

    def test_photographic_input_detected_directly(self):
        backend, sched = self.make_backend()
        img = render_pose(grid_skeleton(), (96, 96))
        out = extract_pose_with_fallback(img, backend, sched)
        assert out is not None and out.source == "detected"

    def test_stylized_input_uses_translation(self):
        # The stylized (dimmed) figure defeats direct detection; the toy
        # backend's degenerate prior lands denoising on the atlas photo, where
        # detection succeeds.
        photo = render_pose(grid_skeleton(), (96, 96))
        backend, sched = self.make_backend(atlas={"a photograph of a person": photo})
        stylized = photo * 0.4
        # Unit guidance: the toy's linear CFG would otherwise scale the prior.
        out = extract_pose_with_fallback(stylized, backend, sched, guidance_scale=1.0)
        assert out is not None
        assert out.source == "fallback_translated"
        assert out.joints == set(JOINT_NAMES)

    def test_blank_image_absent_after_both_attempts(self):
        backend, sched = self.make_backend()
        assert extract_pose_with_fallback(np.zeros((96, 96, 3)), backend, sched) is None


class TestSerialization:
    def test_round_trip(self):
        s = skel(nose=(0.25, 0.5, 0.8), left_wrist=(0.1, 0.9, 0.3))
        again = skeleton_from_json(skeleton_to_json(s))
        assert again.joints == s.joints
        for name in s.joints:
            assert again.keypoints[name] == s.keypoints[name]
        assert again.source == s.source

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            Keypoint("nose", 1.5, 0.5)
        with pytest.raises(ValueError):
            Keypoint("nose", 0.5, 0.5, confidence=2.0)
        with pytest.raises(ValueError):
            Keypoint("tail", 0.5, 0.5)
        with pytest.raises(ValueError):
            PoseSkeleton(keypoints={"nose": Keypoint("neck", 0.5, 0.5)})
        with pytest.raises(ValueError):
            PoseSkeleton(source="guessed")
