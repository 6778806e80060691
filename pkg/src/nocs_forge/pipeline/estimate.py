"""Multi-hypothesis NOCS sampling, pose registration and selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..core import CameraIntrinsics, NocsMap, PointCloud, SimilarityPose, apply_pose, backproject, nocs_to_canonical
from ..denoiser.conditions import MODALITIES, ConditionSet, stack_conditions
from ..denoiser.network import NocsUNet
from ..features import PcaModel, stub_extractor
from ..registration import CorrespondenceSet, RegistrationResult, RobustConfig, robust_register
from ..scheduler import NoiseSchedule, dpm_solver_trajectory, signal_to_nocs
from .conditioning import Extractor, object_mask, prepare_conditions
from .warp import Detection, WarpTransform, unwarp_nocs

DEFAULT_NOISES = 6
DEFAULT_STEPS = 10


class ConditionedDenoiser:
    """Adapts the network to the sampler's ``f(x, t)`` interface for one condition set."""

    def __init__(self, net: NocsUNet, cond: ConditionSet, batch: int, size: int):
        img, cats = stack_conditions([cond], size, net.config.feat_channels)
        self.net = net
        self.dtype = next(net.parameters()).dtype
        self.cond = torch.from_numpy(np.repeat(img, batch, axis=0)).to(self.dtype)
        self.cats = torch.from_numpy(np.repeat(cats, batch))

    def __call__(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = self.net(torch.from_numpy(x).to(self.dtype), self.cond, torch.from_numpy(t).to(self.dtype), self.cats)
        return out.double().numpy()


def noise_seeds(root_seed: int, n_noise: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(root_seed).spawn(n_noise)]


def estimate_nocs(
    net: NocsUNet,
    cond: ConditionSet,
    n_noise: int = DEFAULT_NOISES,
    steps: int = DEFAULT_STEPS,
    schedule: NoiseSchedule | None = None,
    seed: int = 0,
) -> list[NocsMap]:
    """``n_noise`` samples sharing the conditions, one independent noise stream each.

    Maps are square at the condition size; validity is the condition mask.
    """
    if n_noise < 1:
        raise ValueError("n_noise must be >= 1")
    if cond.mask is None:
        raise ValueError("conditions need an object mask")
    size = cond.mask.shape[0]
    schedule = schedule or NoiseSchedule.linear()
    x = np.stack([g.standard_normal((3, size, size)) for g in noise_seeds(seed, n_noise)])
    den = ConditionedDenoiser(net, cond, n_noise, size)
    out = signal_to_nocs(dpm_solver_trajectory(den, x, steps, schedule))
    maps = []
    for sample in out:
        vals = np.where(cond.mask[..., None], np.moveaxis(sample, 0, -1), 1.0)
        maps.append(NocsMap(vals, cond.mask))
    return maps


@dataclass(frozen=True)
class PoseHypothesis:
    pose: SimilarityPose
    confidence: float
    nocs: NocsMap
    noise_index: int = 0
    registration: RegistrationResult | None = field(default=None, compare=False, repr=False)


def correspondences(nocs: NocsMap, depth: np.ndarray, mask: np.ndarray, k: CameraIntrinsics) -> CorrespondenceSet:
    valid = nocs.mask & np.asarray(mask, dtype=bool) & (np.asarray(depth) > 0)
    cam = backproject(depth, valid, k)
    rows, cols = cam.pixels[:, 0], cam.pixels[:, 1]
    return CorrespondenceSet(nocs.values[rows, cols] - 0.5, cam.points)


def estimate_pose(
    nocs: NocsMap, depth, mask, k: CameraIntrinsics, cfg: RobustConfig = RobustConfig(), noise_index: int = 0
) -> PoseHypothesis:
    """Register the NOCS points to the masked depth points of the same pixels."""
    corr = correspondences(nocs, depth, mask, k)
    if len(corr) < 3:
        return PoseHypothesis(SimilarityPose.identity(), 0.0, nocs, noise_index)
    reg = robust_register(corr, cfg)
    return PoseHypothesis(reg.pose, reg.confidence, nocs, noise_index, reg)


def select_best(hyps: list[PoseHypothesis]) -> PoseHypothesis:
    """Highest confidence; ties go to the lowest noise index."""
    if not hyps:
        raise ValueError("no hypotheses to select from")
    return min(hyps, key=lambda h: (-h.confidence, h.noise_index))


def complete_cloud(nocs: NocsMap, pose: SimilarityPose) -> PointCloud:
    """Posed canonical points for every valid NOCS pixel, with or without depth."""
    return apply_pose(pose, nocs_to_canonical(nocs))


@dataclass
class InferenceResult:
    detection: Detection
    best: PoseHypothesis
    hypotheses: list[PoseHypothesis]
    warp: WarpTransform
    conditions: ConditionSet = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "detection": self.detection.to_dict(),
            "pose": self.best.pose.to_dict(),
            "confidence": self.best.confidence,
            "selected_noise": self.best.noise_index,
            "hypotheses": [
                {"noise": h.noise_index, "confidence": h.confidence, "pose": h.pose.to_dict()} for h in self.hypotheses
            ],
        }


def infer_detection(
    net: NocsUNet,
    depth: np.ndarray,
    det: Detection,
    k: CameraIntrinsics,
    *,
    rgb: np.ndarray | None = None,
    mask: np.ndarray | None = None,
    pca: PcaModel | None = None,
    extractor: Extractor | None = stub_extractor,
    features: np.ndarray | None = None,
    modalities=MODALITIES,
    n_noise: int = DEFAULT_NOISES,
    steps: int = DEFAULT_STEPS,
    seed: int = 0,
    crop_size: int = 32,
    reg_cfg: RobustConfig = RobustConfig(),
    schedule: NoiseSchedule | None = None,
) -> InferenceResult:
    """Full per-detection pipeline: conditions, sampling, re-warp, registration, selection."""
    cond, wt = prepare_conditions(
        depth, det, k, rgb=rgb, mask=mask, pca=pca, extractor=extractor, features=features, out_size=crop_size
    )
    full_mask = object_mask(depth, det, mask)
    cond = cond.select(modalities)
    hyps = []
    for i, crop_nocs in enumerate(estimate_nocs(net, cond, n_noise, steps, schedule, seed)):
        full = unwarp_nocs(crop_nocs, wt)
        hyps.append(estimate_pose(full, depth, full_mask, k, reg_cfg, noise_index=i))
    return InferenceResult(det, select_best(hyps), hyps, wt, cond)


def read_detections(path) -> list[Detection]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError("detections file must hold a JSON list")
    return [Detection.from_dict(d) for d in data]


def write_detections(dets: list[Detection], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([d.to_dict() for d in dets]) + "\n")
    return path
