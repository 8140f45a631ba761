"""Quantitative evaluation over a pluggable feature extractor.

FID measures how far output frames drift from the input-image distribution;
PPL sums adjacent-frame feature distances over a sequence as a smoothness
proxy. Sample counts are reported alongside scores because desk-scale corpora
are far below the usual FID sample-size guidance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .generate import FrameSequence


@dataclass(frozen=True)
class FeatureSet:
    vectors: np.ndarray  # (n, d)
    extractor_id: str = ""

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if not np.all(np.isfinite(v)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def gaussian_moments(f: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased sample covariance."""
    if f.vectors.shape[0] < 2:
        raise ValueError("moment estimation needs at least 2 feature vectors")
    mu = f.vectors.mean(axis=0)
    cov = np.cov(f.vectors, rowvar=False, ddof=1)
    return mu, np.atleast_2d(cov)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def sqrt_trace_term(cov_a: np.ndarray, cov_b: np.ndarray, tol: float = 1e-10) -> float:
    """2 * trace((cov_a cov_b)^{1/2}) via the symmetrized-product eigenvalues.

    Negative eigenvalues introduced by floating error are clamped to zero.
    """
    ra = _psd_sqrt(cov_a)
    inner = ra @ cov_b @ ra
    inner = (inner + inner.T) / 2.0
    w = np.linalg.eigvalsh(inner)
    w = np.where(w < tol, np.clip(w, 0.0, None), w)
    return float(2.0 * np.sum(np.sqrt(w)))


def fid_from_moments(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> float:
    diff = np.asarray(mu_a) - np.asarray(mu_b)
    return float(
        diff @ diff + np.trace(cov_a) + np.trace(cov_b) - sqrt_trace_term(cov_a, cov_b)
    )


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Frechet distance between Gaussian fits of the two feature sets."""
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    mu_a, cov_a = gaussian_moments(a)
    mu_b, cov_b = gaussian_moments(b)
    return fid_from_moments(mu_a, cov_a, mu_b, cov_b)


def ppl(seq_features: FeatureSet) -> float:
    """Sum of Euclidean distances between adjacent frames of one sequence."""
    v = seq_features.vectors
    if v.shape[0] < 2:
        raise ValueError("path length needs at least 2 frames")
    return float(np.sum(np.linalg.norm(np.diff(v, axis=0), axis=1)))


def sample_output_frames(
    sequences: Sequence["FrameSequence"], rng: np.random.Generator
) -> list[np.ndarray]:
    """Two random interior frames per sequence, without replacement.

    Endpoints are excluded: they are the inputs, not outputs.
    """
    out = []
    for seq in sequences:
        interior = seq.frames[1:-1]
        if len(interior) < 2:
            raise ValueError(
                f"sequence with {len(seq.frames)} frames has fewer than 2 interior frames"
            )
        picks = sorted(rng.choice(len(interior), size=2, replace=False))
        out.extend(interior[int(p)] for p in picks)
    return out


class RandomProjectionExtractor:
    """Fixed random projection of pixels: a fast deterministic stand-in feature
    space for desk-scale tests."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.extractor_id = f"randproj-{dim}-{seed}"
        self._matrices: dict[int, np.ndarray] = {}

    def _matrix(self, npix: int) -> np.ndarray:
        if npix not in self._matrices:
            rng = np.random.default_rng((self.seed, npix))
            self._matrices[npix] = rng.standard_normal((self.dim, npix)) / np.sqrt(npix)
        return self._matrices[npix]

    def extract(self, images: Sequence[np.ndarray]) -> FeatureSet:
        vecs = []
        for img in images:
            flat = np.asarray(img, dtype=np.float64).ravel()
            vecs.append(self._matrix(flat.size) @ flat)
        return FeatureSet(vectors=np.stack(vecs), extractor_id=self.extractor_id)


class InceptionV3Extractor:
    """Inception v3 pool features via torchvision. Needs the [real] extra and
    downloadable weights; excluded from the deterministic suite."""

    extractor_id = "inception-v3-pool"

    def __init__(self, device: str = "cpu"):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise RuntimeError("InceptionV3Extractor needs torch and torchvision") from exc
        self._torch = torch
        weights = torchvision.models.Inception_V3_Weights.DEFAULT
        self.model = torchvision.models.inception_v3(weights=weights)
        self.model.fc = torch.nn.Identity()
        self.model.eval().requires_grad_(False)
        self.device = device
        self.model.to(device)

    def extract(self, images: Sequence[np.ndarray]) -> FeatureSet:
        torch = self._torch
        vecs = []
        with torch.no_grad():
            for img in images:
                x = torch.from_numpy(np.transpose(img, (2, 0, 1))[None]).float().to(self.device)
                x = torch.nn.functional.interpolate(
                    x, size=(299, 299), mode="bilinear", align_corners=False
                )
                x = (x - 0.5) / 0.5
                vecs.append(self.model(x)[0].cpu().numpy())
        return FeatureSet(vectors=np.stack(vecs), extractor_id=self.extractor_id)


def evaluation_report(
    per_scheme: dict[str, list["FrameSequence"]],
    extractor: Optional[RandomProjectionExtractor] = None,
    seed: int = 0,
) -> dict:
    """Score every scheme's sequences and build the comparison table.

    One row per scheme: FID between the input images and sampled output
    frames, plus PPL mean and std across sequences, with sample counts.
    """
    if extractor is None:
        extractor = RandomProjectionExtractor()
    rows = []
    for scheme, sequences in per_scheme.items():
        if not sequences:
            raise ValueError(f"scheme {scheme!r} has no sequences to evaluate")
        rng = np.random.default_rng(seed)
        inputs = [img for seq in sequences for img in (seq.frames[0], seq.frames[-1])]
        outputs = sample_output_frames(sequences, rng)
        fid_value = fid(extractor.extract(inputs), extractor.extract(outputs))
        ppl_values = [ppl(extractor.extract(seq.frames)) for seq in sequences]
        ddof = 1 if len(ppl_values) > 1 else 0
        rows.append(
            {
                "scheme": scheme,
                "fid": fid_value,
                "ppl_mean": float(np.mean(ppl_values)),
                "ppl_std": float(np.std(ppl_values, ddof=ddof)),
                "num_sequences": len(sequences),
                "num_input_images": len(inputs),
                "num_output_images": len(outputs),
            }
        )
    return {"extractor": extractor.extractor_id, "rows": rows}


def format_report_text(report: dict) -> str:
    lines = [
        f"{'Interpolation Scheme':<24} {'FID':>10} {'PPL (mean±std)':>20} {'#seq':>6} {'#in':>5} {'#out':>5}",
        "-" * 74,
    ]
    for row in report["rows"]:
        ppl_str = f"{row['ppl_mean']:.2f}±{row['ppl_std']:.2f}"
        lines.append(
            f"{row['scheme']:<24} {row['fid']:>10.3f} {ppl_str:>20} "
            f"{row['num_sequences']:>6} {row['num_input_images']:>5} {row['num_output_images']:>5}"
        )
    lines.append(f"features: {report['extractor']}")
    return "\n".join(lines)
