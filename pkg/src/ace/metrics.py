"""Evaluation metrics: diversity, Frechet distance, feature loss and the
unrealistic frame ratio (self-collision, foot penetration, foot sliding)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from ace.errors import DimensionError, ValidationError
from ace.kinematics.skeleton import Skeleton, Trajectory, trajectory_fk
from ace.kinematics.state import character_states, human_states
from ace.retarget.features import EEMapping, character_features, human_features

# ------------------------------------------------------------------ diversity


def _pool(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features)
    parts = [np.atleast_2d(np.asarray(f, dtype=np.float64)) for f in features if len(f)]
    if not parts:
        return np.zeros((0, 0))
    return np.concatenate(parts, axis=0)


def diversity(motions, sample_size: int = 64, seed: int = 0) -> float:
    """Mean distance between two disjoint random subsets of the pooled features."""
    pool = _pool(motions)
    if len(pool) < 2 * sample_size:
        raise ValidationError(
            f"diversity needs at least {2 * sample_size} feature vectors, got {len(pool)}", field="S_d"
        )
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(pool))[: 2 * sample_size]
    a, b = pool[idx[:sample_size]], pool[idx[sample_size:]]
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


# ------------------------------------------------------------------ Frechet


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mu.size, mu.size):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean of size {mu.size}")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def from_samples(cls, x) -> "GaussianStats":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if len(x) < 2:
            raise ValidationError("need at least two samples for a covariance")
        cov = np.cov(x, rowvar=False)
        cov = np.atleast_2d(0.5 * (cov + cov.T))
        return cls(x.mean(axis=0), cov)


def _check_symmetric(m, tol=1e-8):
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > tol * scale:
        raise ValidationError("matrix is not symmetric")


def matrix_sqrt_psd(m) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    _check_symmetric(m)
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    w = np.clip(w, 0.0, None)
    r = (v * np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    if a.mean.shape != b.mean.shape:
        raise DimensionError(f"dimension mismatch: {a.mean.size} vs {b.mean.size}")
    _check_symmetric(a.cov)
    _check_symmetric(b.cov)
    diff = a.mean - b.mean
    mean_term = float(diff @ diff)
    if np.array_equal(a.cov, b.cov):
        trace_term = 0.0
    else:
        sa = matrix_sqrt_psd(a.cov)
        cross = matrix_sqrt_psd(sa @ b.cov @ sa)
        trace_term = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
        scale = 1.0 + float(np.trace(a.cov) + np.trace(b.cov))
        if trace_term < 0.0 or abs(trace_term) < 1e-12 * scale:
            if trace_term < -1e-6 * scale:
                raise ValidationError(f"Frechet trace term is significantly negative ({trace_term:.3g})")
            trace_term = 0.0
    return mean_term + trace_term


# ------------------------------------------------------------------ realism


@dataclass(frozen=True)
class UFRThresholds:
    """Detector thresholds. ``penetration`` is meters; the rest scale with body length."""

    penetration: float = 0.01
    contact_height: float = 0.02
    slide_speed: float = 0.3
    capsule_radius: float = 0.05
    contact_tolerance: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Closest distance between segments [p1,q1] and [p2,q2], vectorized over leading axes."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.sum(d1 * d1, -1)
    e = np.sum(d2 * d2, -1)
    f = np.sum(d2 * r, -1)
    c = np.sum(d1 * r, -1)
    b = np.sum(d1 * d2, -1)
    eps = 1e-12
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps, np.clip((b * f - c * e) / np.where(denom > eps, denom, 1.0), 0.0, 1.0), 0.0)
        s = np.where(a > eps, s, 0.0)
        t = np.where(e > eps, (b * s + f) / np.where(e > eps, e, 1.0), 0.0)
        # clamp t and recompute s for the clamped case
        t_lo = t < 0.0
        t_hi = t > 1.0
        t = np.clip(t, 0.0, 1.0)
        s_lo = np.where(a > eps, np.clip(-c / np.where(a > eps, a, 1.0), 0.0, 1.0), 0.0)
        s_hi = np.where(a > eps, np.clip((b - c) / np.where(a > eps, a, 1.0), 0.0, 1.0), 0.0)
        s = np.where(t_lo, s_lo, np.where(t_hi, s_hi, s))
    c1 = p1 + d1 * s[..., None]
    c2 = p2 + d2 * t[..., None]
    return np.linalg.norm(c1 - c2, axis=-1)


@lru_cache(maxsize=32)
def collision_pairs(skeleton: Skeleton, hops: int = 2) -> tuple[tuple[int, int], ...]:
    """Segment pairs checked for self-collision.

    Segment ``j`` joins joint ``parent(j)`` to joint ``j``. Pairs connected by
    at most ``hops`` steps through shared joints are treated as adjacent.
    """
    segs = list(range(1, skeleton.n_joints))
    ends = {j: {skeleton.joints[j].parent, j} for j in segs}
    nbr = {j: {k for k in segs if k != j and ends[j] & ends[k]} for j in segs}
    pairs = []
    for i, a in enumerate(segs):
        near = {a}
        frontier = {a}
        for _ in range(hops):
            frontier = set().union(*(nbr[x] for x in frontier)) - near
            near |= frontier
        for b in segs[i + 1 :]:
            if b not in near:
                pairs.append((a, b))
    return tuple(pairs)


def self_collision_flags(positions, skeleton: Skeleton, thresholds: UFRThresholds = UFRThresholds()) -> np.ndarray:
    """Per-frame flag: any non-adjacent capsule pair closer than the contact tolerance."""
    pos = np.asarray(positions, dtype=np.float64)
    single = pos.ndim == 2
    if single:
        pos = pos[None]
    pairs = collision_pairs(skeleton)
    flags = np.zeros(len(pos), dtype=bool)
    if pairs:
        par = skeleton.parents
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        seg_len = np.linalg.norm(pos[:, 1:] - pos[:, par[1:]], axis=-1)
        d = segment_distance(pos[:, par[a]], pos[:, a], pos[:, par[b]], pos[:, b])
        radius = thresholds.capsule_radius * skeleton.body_length
        hit = d - 2.0 * radius < thresholds.contact_tolerance
        # zero-length segments carry no body volume
        valid = (seg_len[:, a - 1] > 1e-9) & (seg_len[:, b - 1] > 1e-9)
        flags = np.any(hit & valid, axis=1)
    return flags[0] if single else flags


def foot_penetration_flags(positions, skeleton: Skeleton, thresholds: UFRThresholds = UFRThresholds()):
    feet = skeleton.foot_indices
    pos = np.asarray(positions)
    if not feet:
        return np.zeros(len(pos), dtype=bool)
    return np.any(pos[:, feet, 2] < -thresholds.penetration, axis=1)


def foot_sliding_flags(positions, skeleton: Skeleton, dt: float, thresholds: UFRThresholds = UFRThresholds()):
    feet = skeleton.foot_indices
    pos = np.asarray(positions)
    flags = np.zeros(len(pos), dtype=bool)
    if not feet or len(pos) < 2:
        return flags
    f = pos[:, feet]
    speed = np.linalg.norm(f[1:, :, :2] - f[:-1, :, :2], axis=-1) / dt
    low = f[1:, :, 2] <= thresholds.contact_height * skeleton.body_length
    fast = speed > thresholds.slide_speed * skeleton.body_length
    flags[1:] = np.any(low & fast, axis=1)
    return flags


@dataclass(frozen=True)
class FrameFlags:
    self_collision: bool
    foot_penetration: bool
    foot_sliding: bool

    @property
    def any(self) -> bool:
        return self.self_collision or self.foot_penetration or self.foot_sliding


def unrealistic_frame_ratio(
    traj: Trajectory, skeleton: Skeleton | None = None, thresholds: UFRThresholds = UFRThresholds()
) -> tuple[float, list[FrameFlags]]:
    sk = skeleton or traj.skeleton
    if sk.locomotion == "legged" and not sk.foot_indices:
        raise ValidationError("legged skeleton has no foot end-effectors", field="foot_indices")
    if len(traj) == 0:
        return 0.0, []
    pos, _ = trajectory_fk(traj)
    sc = self_collision_flags(pos, sk, thresholds)
    fp = foot_penetration_flags(pos, sk, thresholds)
    fs = foot_sliding_flags(pos, sk, traj.dt, thresholds)
    flags = [FrameFlags(bool(a), bool(b), bool(c)) for a, b, c in zip(sc, fp, fs)]
    bad = sum(f.any for f in flags)
    return bad / len(flags), flags


# ------------------------------------------------------------------ feature loss


def mean_feature_distance(psi_a, psi_b) -> float:
    """Mean row-wise Euclidean distance between two equally long feature sequences."""
    a, b = np.atleast_2d(np.asarray(psi_a, dtype=np.float64)), np.atleast_2d(np.asarray(psi_b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise ValidationError("no frames to compare", field="frames")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def feature_loss_metric(
    human_traj: Trajectory,
    retargeted_traj: Trajectory,
    mapping: EEMapping,
    human_skeleton: Skeleton | None = None,
    char_skeleton: Skeleton | None = None,
) -> float:
    """Mean per-frame distance between human and retargeted features."""
    hsk = human_skeleton or human_traj.skeleton
    csk = char_skeleton or retargeted_traj.skeleton
    if len(human_traj) != len(retargeted_traj):
        raise ValidationError(
            f"human clip has {len(human_traj)} frames, retargeted clip has {len(retargeted_traj)}", field="frames"
        )
    mapping.check(csk, hsk)
    psi_h = human_features(hsk, mapping)(human_states(human_traj))
    psi_r = character_features(csk, mapping)(character_states(retargeted_traj))
    return mean_feature_distance(psi_h, psi_r)


# ------------------------------------------------------------------ report


@dataclass
class MetricsReport:
    div: float
    fid: float
    feature_loss: float
    ufr: float
    per_frame_flags: list[FrameFlags] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("div", "fid", "feature_loss", "ufr"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"metric must be finite and nonnegative, got {v}", field=name)
        if self.per_frame_flags:
            expected = sum(f.any for f in self.per_frame_flags) / len(self.per_frame_flags)
            if self.ufr != expected:
                raise ValidationError("ufr does not equal flagged/total", field="ufr")

    def to_dict(self) -> dict:
        return {
            "div": self.div,
            "fid": self.fid,
            "feature_loss": self.feature_loss,
            "ufr": self.ufr,
            "per_frame_flags": [asdict(f) for f in self.per_frame_flags],
            "config": self.config,
        }


def evaluate(
    pairs,
    reference_states: np.ndarray,
    mapping: EEMapping,
    sample_size: int = 64,
    seed: int = 0,
    thresholds: UFRThresholds = UFRThresholds(),
) -> MetricsReport:
    """Score retargeted clips against their human sources and a reference dataset.

    ``pairs`` is a sequence of ``(human_traj, retargeted_traj)``; ``reference_states``
    holds character states of the target dataset. DIV and FID are computed on
    the character features, L_fea is averaged over clips, and UFR pools every
    retargeted frame.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("nothing to evaluate", field="motions")
    csk = pairs[0][1].skeleton
    spec = character_features(csk, mapping)
    feats = [spec(character_states(r)) for _, r in pairs]
    ref = spec(np.asarray(reference_states))
    losses = [feature_loss_metric(h, r, mapping) for h, r in pairs]
    flags: list[FrameFlags] = []
    for _, r in pairs:
        flags += unrealistic_frame_ratio(r, csk, thresholds)[1]
    ufr = sum(f.any for f in flags) / len(flags)
    config = {"sample_size": sample_size, "seed": seed, "thresholds": thresholds.to_dict(), "mapping": mapping.to_dict()}
    return MetricsReport(
        div=diversity(feats, sample_size, seed),
        fid=frechet_distance(GaussianStats.from_samples(ref), GaussianStats.from_samples(np.concatenate(feats))),
        feature_loss=float(np.mean(losses)),
        ufr=ufr,
        per_frame_flags=flags,
        config=config,
    )
