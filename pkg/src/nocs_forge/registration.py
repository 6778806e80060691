"""Similarity registration between canonical NOCS points and camera points.

``robust_register`` decouples the problem: scale from pairwise distance ratios
by interval voting, rotation by graduated non-convexity over a truncated
least-squares cost on scale-compensated pair differences, and translation by
per-axis interval voting. The pose is then refit in closed form on the
inliers. ``ransac_umeyama_oracle`` is an independent classical cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SimilarityPose, random_rotation

MIN_NOISE_BOUND = 0.005
RELATIVE_NOISE_BOUND = 0.02


class DegenerateConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class CorrespondenceSet:
    q: np.ndarray  # (N, 3) canonical
    p: np.ndarray  # (N, 3) camera, meters

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3 or q.shape != p.shape:
            raise ValueError(f"need paired (N, 3) arrays, got {q.shape} and {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("correspondences must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return self.q.shape[0]

    def subset(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(self.q[idx], self.p[idx])


@dataclass(frozen=True)
class RobustConfig:
    noise_bound: float | None = None  # None: max(5 mm, 2% of the voted scale)
    gnc_factor: float = 2.0
    gnc_max_iters: int = 100
    gnc_tol: float = 1e-6
    max_correspondences: int = 2000
    max_pairs: int = 100_000
    ransac_iters: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.noise_bound is not None and not self.noise_bound > 0:
            raise ValueError("noise bound must be positive")
        if self.gnc_factor <= 1.0 or self.max_correspondences < 3 or self.ransac_iters < 1:
            raise ValueError(f"invalid registration config {self}")


@dataclass(frozen=True)
class RegistrationResult:
    pose: SimilarityPose
    inlier_mask: np.ndarray  # (N,) over the input correspondences
    confidence: float
    noise_bound: float
    low_confidence: bool = False
    info: dict = field(default_factory=dict, compare=False)

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_mask.sum())


def _rotation_from_cov(h: np.ndarray) -> np.ndarray:
    """Rotation maximizing ``trace(R^T h)`` with the reflection correction."""
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def umeyama(corr: CorrespondenceSet, weights: np.ndarray | None = None) -> SimilarityPose:
    """Least-squares ``s, R, t`` minimizing ``sum w ||p - (s R q + t)||^2``."""
    q, p = corr.q, corr.p
    w = np.ones(len(corr)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(corr) < 3 or (w > 0).sum() < 3:
        raise DegenerateConfigurationError("need at least three weighted correspondences")
    w = w / w.sum()
    mq, mp = w @ q, w @ p
    qc, pc = q - mq, p - mp
    var_q = w @ np.sum(qc**2, axis=1)
    sv = np.linalg.svd(np.sqrt(w)[:, None] * qc, compute_uv=False)
    if var_q <= 1e-24 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError("source points are coincident or collinear")
    cov = (w[:, None] * pc).T @ qc  # sum w p q^T
    u, d, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt)) or 1.0
    s_mat = np.diag([1.0, 1.0, sign])
    r = u @ s_mat @ vt
    scale = float(np.trace(np.diag(d) @ s_mat) / var_q)
    if scale <= 0:
        raise DegenerateConfigurationError("non-positive scale estimate")
    return SimilarityPose(r, mp - scale * r @ mq, scale)


def residuals(pose: SimilarityPose, corr: CorrespondenceSet) -> np.ndarray:
    return np.linalg.norm(corr.p - pose.transform(corr.q), axis=1)


def interval_vote(centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Members of the largest set of intervals ``[c - r, c + r]`` sharing a common point.

    Ties go to the leftmost maximal overlap region.
    """
    lo, hi = centers - radii, centers + radii
    # starts sort before ends at equal coordinates so touching intervals overlap
    coords = np.concatenate([lo, hi])
    kinds = np.concatenate([np.zeros(lo.size), np.ones(hi.size)])
    order = np.lexsort((kinds, coords))
    depth = np.cumsum(np.where(kinds[order] == 0, 1, -1))
    best = int(np.argmax(depth))
    x = coords[order][best]
    return (lo <= x) & (x <= hi)


def _sample_pairs(n: int, cap: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    total = n * (n - 1) // 2
    if total <= cap:
        i, j = np.triu_indices(n, k=1)
        return i, j
    i = rng.integers(0, n, size=cap)
    j = (i + rng.integers(1, n, size=cap)) % n
    return i, j


def _vote_scale(corr: CorrespondenceSet, i, j, bound: float) -> tuple[float, np.ndarray]:
    a = np.linalg.norm(corr.q[i] - corr.q[j], axis=1)
    b = np.linalg.norm(corr.p[i] - corr.p[j], axis=1)
    ok = a > 1e-9
    ratio = np.where(ok, b / np.where(ok, a, 1.0), 0.0)
    radius = np.where(ok, 2.0 * bound / np.where(ok, a, 1.0), 0.0)
    members = interval_vote(ratio[ok], radius[ok])
    keep = np.zeros(a.size, dtype=bool)
    keep[np.flatnonzero(ok)[members]] = True
    s = float(a[keep] @ b[keep] / (a[keep] @ a[keep]))
    return s, keep


def gnc_tls_rotation(u: np.ndarray, v: np.ndarray, bound: float, cfg: RobustConfig) -> tuple[np.ndarray, np.ndarray]:
    """Rotation with ``v ~ R u`` under a truncated least-squares cost (threshold ``bound``).

    Returns the rotation and final weights.
    """
    w = np.ones(len(u))
    rot = _rotation_from_cov(v.T @ u)
    c2 = bound**2
    r2 = np.sum((v - u @ rot.T) ** 2, axis=1)
    mu = 1.0 / max(2.0 * r2.max() / c2 - 1.0, 1e-6)
    for _ in range(cfg.gnc_max_iters):
        r2 = np.sum((v - u @ rot.T) ** 2, axis=1)
        lo, hi = mu / (mu + 1.0) * c2, (mu + 1.0) / mu * c2
        new_w = np.where(r2 <= lo, 1.0, np.where(r2 >= hi, 0.0, bound * np.sqrt(mu * (mu + 1.0) / np.maximum(r2, 1e-12 * c2)) - mu))
        change = np.abs(new_w - w).max()
        w = new_w
        if w.sum() < 1e-12:
            break
        rot = _rotation_from_cov((w[:, None] * v).T @ u)
        if change < cfg.gnc_tol and np.all((w == 0) | (w == 1)):
            break
        mu *= cfg.gnc_factor
    return rot, w


def _vote_translation(corr: CorrespondenceSet, s: float, rot: np.ndarray, bound: float) -> np.ndarray:
    t_i = corr.p - s * corr.q @ rot.T
    t = np.empty(3)
    for axis in range(3):
        members = interval_vote(t_i[:, axis], np.full(len(corr), bound))
        t[axis] = t_i[members, axis].mean()
    return t


def _finalize(corr, pose, bound, info) -> RegistrationResult:
    inl = residuals(pose, corr) <= bound
    low = inl.sum() < 3
    if not low:
        try:
            refined = umeyama(corr.subset(inl))
            inl = residuals(refined, corr) <= bound
            pose = refined
            low = inl.sum() < 3
        except DegenerateConfigurationError:
            low = True
    return RegistrationResult(pose, inl, float(inl.mean()), bound, bool(low), info)


def _low_confidence(n: int, bound: float, reason: str) -> RegistrationResult:
    return RegistrationResult(SimilarityPose.identity(), np.zeros(n, dtype=bool), 0.0, bound, True, {"reason": reason})


def robust_register(corr: CorrespondenceSet, cfg: RobustConfig = RobustConfig()) -> RegistrationResult:
    n = len(corr)
    if n < 3:
        raise ValueError("registration needs at least three correspondences")
    rng = np.random.default_rng(cfg.seed)
    work = corr
    if n > cfg.max_correspondences:
        work = corr.subset(np.sort(rng.choice(n, size=cfg.max_correspondences, replace=False)))
    i, j = _sample_pairs(len(work), cfg.max_pairs, rng)

    bound = cfg.noise_bound
    if bound is None:
        s0, _ = _vote_scale(work, i, j, MIN_NOISE_BOUND)
        bound = max(MIN_NOISE_BOUND, RELATIVE_NOISE_BOUND * s0)
    s, pair_in = _vote_scale(work, i, j, bound)
    if not np.isfinite(s) or s <= 0:
        return _low_confidence(n, bound, "scale vote failed")

    u = s * (work.q[i[pair_in]] - work.q[j[pair_in]])
    v = work.p[i[pair_in]] - work.p[j[pair_in]]
    rot, w = gnc_tls_rotation(u, v, 2.0 * bound, cfg)
    t = _vote_translation(work, s, rot, bound)
    info = {"scale_pairs": int(pair_in.sum()), "rotation_inlier_pairs": int((w > 0.5).sum())}
    return _finalize(corr, SimilarityPose(rot, t, s), bound, info)


def ransac_umeyama_oracle(corr: CorrespondenceSet, cfg: RobustConfig = RobustConfig()) -> RegistrationResult:
    """Three-point hypotheses, consensus by inlier count, refit on the best consensus."""
    n = len(corr)
    if n < 3:
        raise ValueError("registration needs at least three correspondences")
    if cfg.noise_bound is None:
        raise ValueError("the oracle needs an explicit noise bound")
    bound = cfg.noise_bound
    rng = np.random.default_rng(cfg.seed)
    best_count, best_pose = -1, None
    for _ in range(cfg.ransac_iters):
        idx = rng.choice(n, size=3, replace=False)
        try:
            pose = umeyama(corr.subset(idx))
        except DegenerateConfigurationError:
            continue
        count = int((residuals(pose, corr) <= bound).sum())
        if count > best_count:
            best_count, best_pose = count, pose
    if best_pose is None:
        return _low_confidence(n, bound, "no non-degenerate sample")
    return _finalize(corr, best_pose, bound, {"consensus": best_count})


def synthetic_harness(
    n: int = 500, outlier_fraction: float = 0.6, sigma: float = 0.005, seed: int = 0, scale: float = 0.25
) -> tuple[CorrespondenceSet, SimilarityPose, np.ndarray]:
    """Ground-truth registration problem: canonical points in the unit NOCS cube,
    a random pose about 0.6 m in front of the camera, Gaussian inlier noise and
    outliers drawn uniformly from the inliers' bounding box. For a fixed seed
    the outlier set at a higher fraction contains the one at a lower fraction.

    Returns the correspondences, the true pose and the true inlier flags.
    """
    rng = np.random.default_rng(seed)
    q = rng.uniform(-0.5, 0.5, size=(n, 3))
    pose = SimilarityPose(random_rotation(rng), np.array([0.0, 0.0, 0.6]) + rng.uniform(-0.05, 0.05, 3), scale)
    p = pose.transform(q) + sigma * rng.standard_normal((n, 3))
    n_out = int(round(outlier_fraction * n))
    # drawn for every point and truncated, so a seed's outliers nest across fractions
    out = rng.permutation(n)[:n_out]
    lo, hi = p.min(axis=0), p.max(axis=0)
    p[out] = rng.uniform(lo, hi, size=(n, 3))[:n_out]
    truth = np.ones(n, dtype=bool)
    truth[out] = False
    return CorrespondenceSet(q, p), pose, truth
