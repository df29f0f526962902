"""Parametric motion templates on the 17-joint reference human.

Joint rotations are rotation vectors in the parent frame. With x forward and
z up, flexing a hip forward is a negative rotation about y, bending a knee is
a positive one, and raising the right arm sideways is a negative rotation
about x.
"""

from __future__ import annotations

import numpy as np

from ace.errors import ValidationError
from ace.kinematics import quat
from ace.kinematics.characters import HUMAN_PELVIS_HEIGHT, human_skeleton
from ace.kinematics.skeleton import Trajectory

_SK = human_skeleton()
_COL = {j.name: 3 * (i - 1) for i, j in enumerate(_SK.joints) if i > 0}


class _Pose:
    """Accumulates per-joint rotation vectors over a time grid."""

    def __init__(self, n):
        self.jv = np.zeros((n, _SK.dof))

    def set(self, joint, x=0.0, y=0.0, z=0.0):
        c = _COL[joint]
        n = len(self.jv)
        self.jv[:, c : c + 3] = np.column_stack([np.broadcast_to(v, (n,)) for v in (x, y, z)])

    def arms_relaxed(self, swing=0.0):
        self.set("l_shoulder", x=0.12, y=-swing)
        self.set("r_shoulder", x=-0.12, y=swing)
        self.set("l_elbow", y=-0.25)
        self.set("r_elbow", y=-0.25)


def _root(n, dt, speed, turn, yaw0, height):
    t = np.arange(n) * dt
    yaw = yaw0 + turn * t
    pos = np.zeros((n, 3))
    if n > 1:
        mid = 0.5 * (yaw[1:] + yaw[:-1])
        step = speed * dt * np.column_stack([np.cos(mid), np.sin(mid)])
        pos[1:, :2] = np.cumsum(step, axis=0)
    pos[:, 2] = height
    return pos, yaw


def _stance(p: _Pose, rng, t):
    """Per-clip stance width plus a slow side-to-side weight shift."""
    width = rng.uniform(-0.04, 0.14)
    sway = rng.uniform(0.0, 0.06) * np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * t + rng.uniform(0, 2 * np.pi))
    p.set("l_hip", x=width + sway)
    p.set("r_hip", x=-width + sway)
    p.set("l_ankle", x=-(width + sway))
    p.set("r_ankle", x=width - sway)


def _legs(p: _Pose, theta, amp, knee_amp, rng):
    width = rng.uniform(-0.03, 0.1)
    for side, sign in (("l", 1.0), ("r", -1.0)):
        ph = theta + (0.0 if sign > 0 else np.pi)
        hip = amp * np.sin(ph)
        knee = knee_amp * np.clip(np.sin(ph + 0.6 * np.pi / 2), 0.0, None) + 0.05
        # abduct during swing so the feet trace a slightly curved path
        p.set(f"{side}_hip", x=sign * (width + 0.04 * np.clip(np.sin(ph), 0, None)), y=-hip)
        p.set(f"{side}_knee", y=knee)
        p.set(f"{side}_ankle", y=-0.3 * knee)


def walk(n, dt, rng, speed=None, turn=None):
    speed = rng.uniform(0.5, 1.8) if speed is None else speed
    turn = rng.uniform(-0.4, 0.4) if turn is None else turn
    t = np.arange(n) * dt
    freq = 0.8 + 0.35 * speed
    theta = 2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)
    amp = 0.2 + 0.15 * speed
    p = _Pose(n)
    _legs(p, theta, amp, 0.3 + 0.3 * speed, rng)
    p.arms_relaxed(swing=0.6 * amp * np.sin(theta))
    p.set("spine", y=0.05 * speed)
    height = HUMAN_PELVIS_HEIGHT - 0.02 - 0.015 * speed * (0.5 - 0.5 * np.cos(2 * theta))
    pos, yaw = _root(n, dt, speed, turn, rng.uniform(-np.pi, np.pi), height)
    return pos, yaw, p.jv


def stand(n, dt, rng):
    t = np.arange(n) * dt
    p = _Pose(n)
    _stance(p, rng, t)
    p.arms_relaxed()
    p.set("spine", x=0.03 * np.sin(2 * np.pi * 0.3 * t))
    pos, yaw = _root(n, dt, 0.0, 0.0, rng.uniform(-np.pi, np.pi), HUMAN_PELVIS_HEIGHT)
    return pos, yaw, p.jv


def wave(n, dt, rng):
    """Right arm held overhead with the forearm swinging side to side."""
    t = np.arange(n) * dt
    freq = rng.uniform(1.0, 2.0)
    p = _Pose(n)
    _stance(p, rng, t)
    p.arms_relaxed()
    p.set("r_shoulder", x=-rng.uniform(2.4, 2.7))
    p.set("r_elbow", x=0.5 * np.sin(2 * np.pi * freq * t))
    p.set("spine", x=0.05)
    pos, yaw = _root(n, dt, 0.0, 0.0, rng.uniform(-np.pi, np.pi), HUMAN_PELVIS_HEIGHT)
    return pos, yaw, p.jv


def reach(n, dt, rng):
    """Reach forward with one or both arms, then return."""
    t = np.arange(n) * dt
    dur = n * dt
    s = np.sin(np.pi * t / dur) ** 2
    lift = rng.uniform(0.8, 1.8)
    side = rng.integers(3)  # 0 left, 1 right, 2 both
    p = _Pose(n)
    _stance(p, rng, t)
    p.arms_relaxed()
    if side in (0, 2):
        p.set("l_shoulder", x=0.12, y=-lift * s)
        p.set("l_elbow", y=-0.25 * (1 - s))
    if side in (1, 2):
        p.set("r_shoulder", x=-0.12, y=-lift * s)
        p.set("r_elbow", y=-0.25 * (1 - s))
    p.set("spine", y=0.25 * s)
    pos, yaw = _root(n, dt, 0.0, 0.0, rng.uniform(-np.pi, np.pi), HUMAN_PELVIS_HEIGHT - 0.03 * s)
    return pos, yaw, p.jv


def push(n, dt, rng):
    """Slow walk with both arms extended forward."""
    speed = rng.uniform(0.3, 0.8)
    t = np.arange(n) * dt
    theta = 2 * np.pi * (0.8 + 0.3 * speed) * t + rng.uniform(0, 2 * np.pi)
    p = _Pose(n)
    _legs(p, theta, 0.25, 0.45, rng)
    p.set("l_shoulder", x=0.1, y=-1.3)
    p.set("r_shoulder", x=-0.1, y=-1.3)
    p.set("l_elbow", y=-0.4)
    p.set("r_elbow", y=-0.4)
    p.set("spine", y=0.2)
    pos, yaw = _root(n, dt, speed, 0.0, rng.uniform(-np.pi, np.pi), HUMAN_PELVIS_HEIGHT - 0.04)
    return pos, yaw, p.jv


TEMPLATES = {"walk": walk, "wave": wave, "reach": reach, "push": push, "stand": stand}


def human_motion(template: str, n_frames: int, dt: float = 1.0 / 30.0, seed: int = 0, **kw) -> Trajectory:
    try:
        fn = TEMPLATES[template]
    except KeyError:
        raise ValidationError(f"unknown template {template!r}; choose from {sorted(TEMPLATES)}", field="templates")
    if n_frames < 2:
        raise ValidationError("need at least two frames", field="n_frames")
    rng = np.random.default_rng(seed)
    pos, yaw, jv = fn(n_frames, dt, rng, **kw)
    rq = quat.yaw(yaw)
    return Trajectory(_SK, dt, pos, rq, jv, {"template": template})
