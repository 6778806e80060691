"""Noise-prediction loss, its gradient, and the training loop.

Every stochastic quantity of a training step comes from
``np.random.default_rng(SeedSequence([seed, step]))``, so a step can be
replayed alone and a resumed run follows the unresumed loss curve.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from ..datagen.augment import PhongParams, cutout, inplane_rotate, phong_relight
from ..datagen.render import RenderedView
from ..features import PcaModel, fit_pca, stub_extractor
from ..pipeline.conditioning import prepare_conditions
from ..pipeline.warp import Detection, warp_nocs
from ..scheduler import NoiseSchedule, nocs_to_signal
from .checkpoint import Checkpoint
from .conditions import MODALITIES, ConditionSet, stack_conditions
from .network import DenoiserConfig, NocsUNet, build, flat_params, set_flat_params

P_DROP = 0.25
LOSS_WEIGHTINGS = ("eps", "v")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 6000
    batch_size: int = 16
    lr: float = 2e-4
    p_drop: float = P_DROP
    seed: int = 0
    crop_size: int = 32
    augment: bool = True
    phong_prob: float = 0.5
    cutout_prob: float = 0.5
    loss_weighting: str = "eps"

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must lie in [0, 1)")
        if self.crop_size < 4 or self.lr <= 0:
            raise ValueError(f"invalid training config {self}")
        if self.loss_weighting not in LOSS_WEIGHTINGS:
            raise ValueError(f"loss_weighting must be one of {LOSS_WEIGHTINGS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Batch:
    target: np.ndarray  # (B, 3, S, S) NOCS signal in [-1, 1]
    cond: np.ndarray  # (B, 6 + M, S, S)
    category: np.ndarray  # (B,)

    def __len__(self) -> int:
        return self.target.shape[0]


@dataclass
class LossDraws:
    k: np.ndarray  # (B,) integer steps
    eps: np.ndarray  # (B, 3, S, S)
    keep: np.ndarray  # (B, 4) per-modality keep flags, ordered as MODALITIES


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


def make_batch(examples: list[tuple[np.ndarray, ConditionSet]], feat_channels: int) -> Batch:
    size = examples[0][0].shape[0]
    cond, cats = stack_conditions([c for _, c in examples], size, feat_channels)
    target = np.stack([np.moveaxis(nocs_to_signal(t), -1, 0) for t, _ in examples]).astype(np.float32)
    return Batch(target, cond, cats)


def draw(batch: Batch, schedule: NoiseSchedule, p_drop: float, rng: np.random.Generator) -> LossDraws:
    b = len(batch)
    if b == 0:
        raise ValueError("empty batch")
    k = rng.integers(0, schedule.num_steps, size=b)
    eps = rng.standard_normal(batch.target.shape)
    keep = rng.random((b, len(MODALITIES))) >= p_drop
    return LossDraws(k, eps, keep)


def apply_dropout(cond: torch.Tensor, category: torch.Tensor, keep: torch.Tensor):
    """Replace dropped modalities by their null encodings (zeros / category 0)."""
    chan = torch.ones_like(cond)
    chan[:, 0:3] *= keep[:, 0, None, None, None]
    chan[:, 3:6] *= keep[:, 1, None, None, None]
    chan[:, 6:] *= keep[:, 2, None, None, None]
    return cond * chan, category * keep[:, 3].to(category.dtype)


def realized_loss(
    net: NocsUNet, batch: Batch, draws: LossDraws, schedule: NoiseSchedule, weighting: str = "eps"
) -> torch.Tensor:
    """Pixelwise MSE between the drawn noise and its prediction.

    ``weighting="v"`` divides each sample's error by ``alpha_bar_k``, which
    makes the loss uniform in the velocity the network's convolutions output.
    """
    dtype = next(net.parameters()).dtype
    ab = schedule.alphas_cumprod[draws.k].reshape(-1, 1, 1, 1)
    noisy = np.sqrt(ab) * batch.target + np.sqrt(1.0 - ab) * draws.eps
    keep = torch.from_numpy(draws.keep.astype(np.float64)).to(dtype)
    cond, cat = apply_dropout(
        torch.from_numpy(batch.cond).to(dtype), torch.from_numpy(batch.category), keep
    )
    eps = torch.from_numpy(draws.eps).to(dtype)
    pred = net(torch.from_numpy(noisy).to(dtype), cond, torch.from_numpy(draws.k.astype(np.float64)).to(dtype), cat)
    if weighting == "eps":
        return torch.mean((pred - eps) ** 2)
    w = torch.from_numpy(1.0 / ab).to(dtype)
    return torch.mean(w * (pred - eps) ** 2)


def loss(net: NocsUNet, batch: Batch, schedule: NoiseSchedule, rng: np.random.Generator, p_drop: float = P_DROP) -> float:
    with torch.no_grad():
        return float(realized_loss(net, batch, draw(batch, schedule, p_drop, rng), schedule))


def gradient(
    net: NocsUNet, batch: Batch, schedule: NoiseSchedule, rng: np.random.Generator, p_drop: float = P_DROP
) -> tuple[float, np.ndarray]:
    """Loss and flat parameter gradient for the same draws ``loss`` would make."""
    net.zero_grad(set_to_none=False)
    value = realized_loss(net, batch, draw(batch, schedule, p_drop, rng), schedule)
    value.backward()
    grad = torch.cat([p.grad.reshape(-1) for p in net.parameters()]).detach().cpu().numpy()
    return float(value.detach()), grad


def feature_pca(views: list[RenderedView], m: int, crop_size: int) -> PcaModel:
    """PCA of stub features over object pixels of the un-augmented training crops."""
    samples = []
    for v in views:
        det = Detection.from_mask(v.mask, v.category)
        cond, _ = prepare_conditions(v.depth, det, v.intrinsics, rgb=v.rgb, mask=v.mask, out_size=crop_size)
        samples.append(stub_extractor(cond.rgb)[cond.mask])
    return fit_pca(samples, m)


def training_example(
    view: RenderedView, rng: np.random.Generator, pca: PcaModel | None, cfg: TrainConfig
) -> tuple[np.ndarray, ConditionSet]:
    """One augmented (target NOCS crop, conditions) pair through the inference preparation path."""
    if cfg.augment:
        view = inplane_rotate(view, float(rng.uniform(-np.pi, np.pi)))
        if rng.random() < cfg.phong_prob:
            view = view.with_maps(rgb=phong_relight(view.rgb, view.normal, PhongParams.sample(rng)))
        if rng.random() < cfg.cutout_prob:
            cut = cutout(view, rng_seed=int(rng.integers(2**31)))
            if cut.mask.sum() >= 0.5 * view.mask.sum():
                view = cut
    det = Detection.from_mask(view.nocs.mask, view.category)
    cond, wt = prepare_conditions(
        view.depth, det, view.intrinsics, rgb=view.rgb, mask=view.mask,
        pca=pca, extractor=stub_extractor if pca is not None else None, out_size=cfg.crop_size,
    )
    return warp_nocs(view.nocs, wt).values, cond


def sample_batch(views, step: int, pca, cfg: TrainConfig, feat_channels: int) -> tuple[Batch, np.random.Generator]:
    rng = step_rng(cfg.seed, step)
    idx = rng.integers(0, len(views), size=cfg.batch_size)
    return make_batch([training_example(views[i], rng, pca, cfg) for i in idx], feat_channels), rng


def cosine_lr(cfg: TrainConfig, step: int) -> float:
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / cfg.steps))


def _adam_state(opt: torch.optim.Adam, net: NocsUNet) -> tuple[np.ndarray, np.ndarray]:
    m, v = [], []
    for p in net.parameters():
        st = opt.state.get(p, {})
        m.append(st["exp_avg"].reshape(-1) if st else torch.zeros(p.numel()))
        v.append(st["exp_avg_sq"].reshape(-1) if st else torch.zeros(p.numel()))
    return torch.cat(m).numpy().copy(), torch.cat(v).numpy().copy()


def _restore_adam(opt: torch.optim.Adam, net: NocsUNet, adam, step: int) -> None:
    m, v = adam
    off = 0
    for p in net.parameters():
        n = p.numel()
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(m[off : off + n].reshape(p.shape).copy()),
            "exp_avg_sq": torch.from_numpy(v[off : off + n].reshape(p.shape).copy()),
        }
        off += n


@dataclass
class TrainResult:
    net: NocsUNet
    checkpoint: Checkpoint
    losses: list[float] = field(default_factory=list)


def train(
    views: list[RenderedView],
    arch: DenoiserConfig,
    cfg: TrainConfig,
    *,
    schedule: NoiseSchedule | None = None,
    resume: Checkpoint | None = None,
    stop_at: int | None = None,
    on_step: Callable[[int, float, Checkpoint | None], None] | None = None,
    checkpoint_every: int = 0,
) -> TrainResult:
    """Adam with cosine decay on the noise-prediction loss.

    ``stop_at`` ends the run early (for checkpoint-and-resume). ``on_step`` is
    called after every step with a fresh checkpoint every ``checkpoint_every``
    steps (``None`` otherwise).
    """
    if not views:
        raise ValueError("training needs at least one view")
    schedule = schedule or NoiseSchedule.linear()
    if resume is not None:
        arch, pca, start, losses = resume.config, resume.pca, resume.step, list(resume.losses)
        if TrainConfig.from_dict(resume.train_config) != cfg:
            raise ValueError("resumed run must use the original training config")
    else:
        pca = feature_pca(views, arch.feat_channels, cfg.crop_size) if arch.feat_channels else None
        start, losses = 0, []
    net = build(arch, seed=cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    if resume is not None:
        set_flat_params(net, resume.params)
        if resume.adam is not None:
            _restore_adam(opt, net, resume.adam, start)

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(arch, flat_params(net).astype(np.float32), pca, step, list(losses),
                          cfg.to_dict(), _adam_state(opt, net))

    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    for step in range(start, end):
        batch, rng = sample_batch(views, step, pca, cfg, arch.feat_channels)
        for g in opt.param_groups:
            g["lr"] = cosine_lr(cfg, step)
        opt.zero_grad(set_to_none=False)
        value = realized_loss(net, batch, draw(batch, schedule, cfg.p_drop, rng), schedule, cfg.loss_weighting)
        if not torch.isfinite(value):
            raise TrainingDiverged(f"loss became {float(value.detach())} at step {step} (lr {cosine_lr(cfg, step):.3g})")
        value.backward()
        opt.step()
        losses.append(float(value.detach()))
        if on_step is not None:
            due = checkpoint_every and (step + 1) % checkpoint_every == 0
            on_step(step, losses[-1], snapshot(step + 1) if due else None)
    return TrainResult(net, snapshot(end), losses)


def net_from_checkpoint(ck: Checkpoint, dtype=torch.float32) -> NocsUNet:
    net = build(ck.config).to(dtype)
    set_flat_params(net, ck.params)
    net.eval()
    return net
