"""Synthetic motion data: procedural character gaits and parametric human clips."""

from __future__ import annotations

import numpy as np

from ace.dataset import MotionDataset
from ace.datagen.bvh import import_bvh
from ace.datagen.gait import CommandProfile, GaitSpec, default_gaits, leg_ik, rollout_controller
from ace.datagen.human import TEMPLATES, human_motion
from ace.datagen.io import load_dataset, load_motion, save_dataset, save_motion
from ace.errors import ValidationError
from ace.kinematics.characters import CharacterRig, get_rig, human_skeleton


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def gen_character_dataset(
    rig: CharacterRig | str,
    gaits: tuple[GaitSpec, ...] | None = None,
    profile: CommandProfile = CommandProfile(),
    n_frames: int = 5000,
    dt: float = 1.0 / 30.0,
    segment_frames: int = 300,
) -> MotionDataset:
    """Roll out the controller under random commands, ``segment_frames`` per trajectory."""
    if isinstance(rig, str):
        rig = get_rig(rig)
    if n_frames < 2:
        raise ValidationError("need at least two frames", field="n_frames")
    if rig.skeleton.locomotion == "legged" and not rig.legs:
        raise ValidationError("legged skeleton has no leg chains", field="legs")
    segment_frames = max(2, segment_frames)
    sizes = [segment_frames] * (n_frames // segment_frames)
    rest = n_frames - sum(sizes)
    if rest >= 2:
        sizes.append(rest)
    elif rest and sizes:
        sizes[-1] += rest
    trajs = []
    for n, seed in zip(sizes, _seeds(profile.seed, len(sizes))):
        rng = np.random.default_rng(seed)
        v, w = profile.sample(rng, n, dt)
        trajs.append(rollout_controller(rig, v, w, dt=dt, gaits=gaits, seed=seed))
    return MotionDataset(rig.skeleton, tuple(trajs), "character")


def gen_human_dataset(
    profile: CommandProfile = CommandProfile(),
    templates: tuple[str, ...] = ("walk", "wave", "reach", "push"),
    n: int = 40,
    n_frames: int = 150,
    dt: float = 1.0 / 30.0,
) -> MotionDataset:
    """``n`` clips cycling through ``templates``; walking speeds stay inside the profile range."""
    if not templates:
        raise ValidationError("need at least one template", field="templates")
    for name in templates:
        if name not in TEMPLATES:
            raise ValidationError(f"unknown template {name!r}", field="templates")
    lo, hi = max(profile.lin_vel[0], 0.5), min(profile.lin_vel[1], 1.8)
    trajs = []
    for i, seed in enumerate(_seeds(profile.seed, n)):
        name = templates[i % len(templates)]
        kw = {}
        if name == "walk":
            rng = np.random.default_rng(seed + 1)
            kw["speed"] = rng.uniform(lo, hi) if lo <= hi else float(np.clip(1.0, *profile.lin_vel))
        trajs.append(human_motion(name, n_frames, dt, seed, **kw))
    return MotionDataset(human_skeleton(), tuple(trajs), "human")


__all__ = [
    "CommandProfile",
    "GaitSpec",
    "default_gaits",
    "gen_character_dataset",
    "gen_human_dataset",
    "human_motion",
    "import_bvh",
    "leg_ik",
    "load_dataset",
    "load_motion",
    "rollout_controller",
    "save_dataset",
    "save_motion",
]
