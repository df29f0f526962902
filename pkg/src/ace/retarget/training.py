"""Alternating discriminator/generator training and frame-by-frame retargeting."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ace.autodiff.optim import AdamState, adam_step
from ace.dataset import MotionDataset
from ace.errors import NumericalError, ValidationError
from ace.kinematics import quat
from ace.kinematics.skeleton import Trajectory
from ace.kinematics.state import character_layout, human_states, states_to_trajectory
from ace.prior import PriorModel, canonicalize, cosine_lr, prior_step
from ace.retarget.features import EEMapping, character_features, human_features
from ace.retarget.networks import (
    DiscriminatorModel,
    GeneratorModel,
    discriminator_loss,
    generator_forward,
    generator_loss,
    save_model,
    with_params,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    w_gp: float = 0.1
    w_adv: float = 0.3
    w_fea: float = 0.7
    lr: float = 3e-4
    lr_min_ratio: float = 0.05  # cosine decay floor as a fraction of lr
    batch_size: int = 256
    steps: int = 1000
    seed: int = 0
    d_steps: int = 1  # discriminator updates per generator update
    g_hidden: tuple[int, ...] = (128, 128, 128)
    d_hidden: tuple[int, ...] = (128, 128, 128)
    checkpoint_every: int = 0
    log_every: int = 10
    self_prev: float = 0.0  # share of previous states drawn from the generator's own recent outputs

    def __post_init__(self):
        for name in ("g_hidden", "d_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))
        for name in ("w_gp", "w_adv", "w_fea", "lr"):
            if getattr(self, name) < 0:
                raise ValidationError("must be nonnegative", field=name)
        if self.w_adv + self.w_fea <= 0:
            raise ValidationError("w_adv + w_fea must be positive", field="w_fea")
        if not 0.0 <= self.lr_min_ratio <= 1.0:
            raise ValidationError("must lie in [0, 1]", field="lr_min_ratio")
        if not 0.0 <= self.self_prev < 1.0:
            raise ValidationError("must lie in [0, 1)", field="self_prev")
        if self.batch_size <= 0 or self.steps < 0 or self.d_steps < 1:
            raise ValidationError("batch_size and d_steps must be positive, steps nonnegative", field="steps")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValidationError(f"unknown keys {unknown}", field="train")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    d_penalty: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    g_adv: list[float] = field(default_factory=list)
    g_fea: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AceResult:
    generator: GeneratorModel
    discriminator: DiscriminatorModel
    mapping: EEMapping
    history: TrainHistory


class TrainingDiverged(NumericalError):
    """Raised on a non-finite loss; ``result`` holds the last finite parameters."""

    def __init__(self, message, result: AceResult):
        super().__init__(message)
        self.result = result


def standing_state(prior: PriorModel, states: np.ndarray, speed_tol: float = 0.05) -> np.ndarray:
    """The recorded standing frame closest to the mean standing state.

    Averaging poses gives a state no clip contains, so the nearest real frame
    (in normalized units) is returned instead.
    """
    lay = character_layout(prior.skeleton)
    vel = states[:, lay.slices["root_lin_ang_vel"]]
    speed = np.linalg.norm(vel[:, :3], axis=1) / prior.skeleton.body_length + np.linalg.norm(vel[:, 3:], axis=1)
    still = states[speed < speed_tol]
    if len(still) == 0:
        still = states[np.argsort(speed)[: max(1, len(states) // 20)]]
    centre = prior.normalize(still.mean(axis=0))
    best = np.argmin(np.sum((prior.normalize(still) - centre) ** 2, axis=1))
    return canonicalize(prior, still[best])


def _normal_stats(x: np.ndarray, floor: float = 1e-2):
    return x.mean(axis=0), np.maximum(x.std(axis=0), floor)


def train_ace(
    human_ds: MotionDataset,
    char_ds: MotionDataset,
    prior: PriorModel,
    mapping: EEMapping,
    config: TrainConfig = TrainConfig(),
    checkpoint_dir: str | Path | None = None,
) -> AceResult:
    """Train G and D against a frozen prior on unpaired human frames and character transitions."""
    if human_ds.species != "human" or char_ds.species != "character":
        raise ValidationError("expected a human dataset and a character dataset", field="species")
    if char_ds.skeleton != prior.skeleton:
        raise ValidationError("prior was trained on a different skeleton", field="prior")
    mapping.check(char_ds.skeleton, human_ds.skeleton)
    hs = human_ds.all_states()
    prev, cur = char_ds.transitions()
    if len(hs) == 0 or len(prev) == 0:
        raise ValidationError("both datasets need at least one state transition", field="dataset")

    psi_h_spec = human_features(human_ds.skeleton, mapping)
    psi_r_spec = character_features(char_ds.skeleton, mapping)
    psi_h_all = psi_h_spec(hs)
    h_mean, h_std = _normal_stats(hs)
    x0 = standing_state(prior, char_ds.all_states())

    rng = np.random.default_rng(config.seed)
    seeds = rng.integers(0, 2**31, size=2)
    g = GeneratorModel.create(prior, h_mean, h_std, x0, config.g_hidden, seed=int(seeds[0]))
    d = DiscriminatorModel.create(prior, config.d_hidden, seed=int(seeds[1]))
    g_opt, d_opt = AdamState(lr=config.lr), AdamState(lr=config.lr)
    use_d = config.w_adv > 0
    hist = TrainHistory()
    prev_n, cur_n = prior.normalize(prev), prior.normalize(cur)
    real_all = np.concatenate([prev_n, cur_n], axis=1)
    # human frames and transitions are paired row by row, so both draws share one size
    b = min(config.batch_size, len(hs), len(prev))

    def draw(n):
        return np.arange(n) if n == b else rng.choice(n, b, replace=False)

    def result():
        return AceResult(g, d, mapping, hist)

    # ring buffer of generated states; feeding them back as previous states
    # exposes G to the drift it causes in closed loop
    n_self = int(round(config.self_prev * b))
    buffer = np.empty((0, prev.shape[1]))

    def prevs(idx):
        out = prev[idx]
        if n_self and len(buffer):
            k = min(n_self, len(buffer))
            out = out.copy()
            out[:k] = buffer[rng.choice(len(buffer), k, replace=False)]
        return out

    d_parts = None
    for step in range(config.steps + 1):
        lr = cosine_lr(config.lr, config.lr_min_ratio, step, config.steps)
        g_opt, d_opt = replace(g_opt, lr=lr), replace(d_opt, lr=lr)
        if use_d and step < config.steps:
            for _ in range(config.d_steps):
                ri, hi, fi = draw(len(prev)), draw(len(hs)), draw(len(prev))
                fake_prev = prevs(fi)
                fake_cur = prior_step(prior, generator_forward(g, prior, hs[hi], fake_prev), fake_prev)
                fake = np.concatenate([prior.normalize(fake_prev), prior.normalize(fake_cur)], axis=1)
                d_parts, grads = discriminator_loss(d, real_all[ri], fake, config.w_gp)
                if not np.isfinite(d_parts.total):
                    raise TrainingDiverged(f"discriminator loss is non-finite at step {step}", result())
                params, d_opt = adam_step(d.net.params, grads, d_opt)
                d = with_params(d, params)
        hi, pi = draw(len(hs)), draw(len(prev))
        g_prev = prevs(pi)
        g_parts, grads = generator_loss(
            g, d if use_d else None, prior, hs[hi], g_prev, psi_h_all[hi], psi_r_spec, config.w_adv, config.w_fea
        )
        if not np.isfinite(g_parts.total):
            raise TrainingDiverged(f"generator loss is non-finite at step {step}", result())
        if step % config.log_every == 0 or step == config.steps:
            hist.steps.append(step)
            hist.g_loss.append(g_parts.total)
            hist.g_adv.append(g_parts["adv"])
            hist.g_fea.append(g_parts["fea"])
            hist.d_loss.append(d_parts.total if d_parts else 0.0)
            hist.d_penalty.append(d_parts["penalty"] if d_parts else 0.0)
        if step == config.steps:
            break
        params, g_opt = adam_step(g.net.params, grads, g_opt)
        g = with_params(g, params)
        if n_self:
            nxt = prior_step(prior, generator_forward(g, prior, hs[hi[:n_self]], g_prev[:n_self]), g_prev[:n_self])
            nxt = nxt[np.all(np.isfinite(nxt), axis=1)]
            buffer = np.concatenate([nxt, buffer])[: 8 * n_self]
        if checkpoint_dir is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            out = Path(checkpoint_dir)
            save_model(out / f"generator_{step + 1:06d}.ckpt", g, {"step": step + 1})
            save_model(out / f"discriminator_{step + 1:06d}.ckpt", d, {"step": step + 1})
    return result()


# ------------------------------------------------------------ inference


def retarget(
    g: GeneratorModel,
    prior: PriorModel,
    human_traj: Trajectory,
    x0: np.ndarray | None = None,
) -> tuple[Trajectory, np.ndarray]:
    """Translate a human clip frame by frame into the character's motion.

    The output has one frame per input frame: the seed state ``x0`` followed by
    one generated state for each human frame from ``t = 1``. The character
    starts at the human's ground position and heading. A non-finite state
    stops generation and sets ``meta["truncated"]``.
    """
    if len(human_traj) < 2:
        raise ValidationError("need at least two human frames", field="frames")
    xh = human_states(human_traj)
    x = canonicalize(prior, g.x0 if x0 is None else np.asarray(x0, dtype=np.float64))
    states = [x]
    truncated = False
    for t in range(len(xh)):
        nxt = prior_step(prior, generator_forward(g, prior, xh[t], states[-1]), states[-1])
        if not np.all(np.isfinite(nxt)):
            truncated = True
            break
        states.append(nxt)
    states = np.stack(states)
    origin = human_traj.root_positions[0, :2]
    heading = float(quat.yaw_angle(human_traj.root_orientations[0]))
    traj = states_to_trajectory(states, prior.skeleton, human_traj.dt, origin, heading)
    meta = {"truncated": truncated, "source_frames": len(human_traj)}
    return Trajectory(traj.skeleton, traj.dt, traj.root_positions, traj.root_orientations, traj.joint_values, meta), states
