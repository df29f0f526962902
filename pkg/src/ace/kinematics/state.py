"""Per-frame state vectors expressed in the character's heading frame.

Both layouts are flat float64 vectors. Positions are relative to the root's
ground projection rotated into the heading frame, so heights are kept.
Velocities are backward differences ``(x_t - x_{t-1}) / dt`` rotated into the
heading frame of frame ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ace.errors import DimensionError, ValidationError
from ace.kinematics import quat
from ace.kinematics.skeleton import Skeleton, Trajectory, fk_arrays, headings

HUMAN_JOINTS = 17
HUMAN_EES = 5


@dataclass(frozen=True)
class StateLayout:
    blocks: tuple[tuple[str, int], ...]

    @cached_property
    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, n in self.blocks:
            out[name] = slice(start, start + n)
            start += n
        return out

    @property
    def size(self) -> int:
        return sum(n for _, n in self.blocks)

    @property
    def quaternion_blocks(self) -> list[str]:
        return [name for name, _ in self.blocks if name in ("root_orientation", "rel_root_orientation")]

    def unpack(self, x) -> dict[str, np.ndarray]:
        x = np.asarray(x)
        if x.shape[-1] != self.size:
            raise DimensionError(f"state has length {x.shape[-1]}, layout expects {self.size}")
        return {name: x[..., s] for name, s in self.slices.items()}

    def indices(self, name: str) -> np.ndarray:
        s = self.slices[name]
        return np.arange(s.start, s.stop)


HUMAN_LAYOUT = StateLayout(
    (
        ("root_height", 1),
        ("root_orientation", 4),
        ("root_lin_ang_vel", 6),
        ("joint_positions", 3 * HUMAN_JOINTS),
        ("ee_positions", 3 * HUMAN_EES),
        ("ee_velocities", 3 * HUMAN_EES),
    )
)


def character_layout(skeleton: Skeleton) -> StateLayout:
    n_ee = skeleton.n_ee
    return StateLayout(
        (
            ("root_height", 1),
            ("root_orientation", 4),
            ("rel_root_location", 2),
            ("rel_root_orientation", 4),
            ("root_lin_ang_vel", 6),
            ("joint_pose", skeleton.dof),
            ("ee_positions", 3 * n_ee),
            ("ee_velocities", 3 * n_ee),
        )
    )


def character_state_size(skeleton: Skeleton) -> int:
    return 17 + skeleton.dof + 6 * skeleton.n_ee


def _check_human(skeleton: Skeleton):
    if skeleton.n_joints != HUMAN_JOINTS or skeleton.n_ee != HUMAN_EES:
        raise DimensionError(
            f"human states need {HUMAN_JOINTS} joints and {HUMAN_EES} end-effectors, "
            f"skeleton {skeleton.name!r} has {skeleton.n_joints} and {skeleton.n_ee}"
        )


class _Kin:
    """Shared per-frame quantities for a run of frames."""

    def __init__(self, traj: Trajectory, start: int, stop: int):
        sk = traj.skeleton
        h_all = headings(traj.root_orientations[:stop])
        rp = traj.root_positions[start:stop]
        rq = traj.root_orientations[start:stop]
        pos, _ = fk_arrays(sk, rp, rq, traj.joint_values[start:stop])
        self.dt = traj.dt
        self.heading = h_all[start:stop]
        self.yaw = quat.yaw(self.heading)
        self.inv_yaw = quat.conj(self.yaw)
        self.root_pos = rp
        self.root_quat = rq
        origin = rp * np.array([1.0, 1.0, 0.0])
        self.world = pos
        self.local = quat.rotate(self.inv_yaw[:, None], pos - origin[:, None])
        self.local_orientation = quat.canonical(quat.mul(self.inv_yaw, rq))
        self.joint_values = traj.joint_values[start:stop]
        self.ee = sk.ee_joints

    def root_velocity(self):
        """(T-1, 6) linear then angular root velocity for frames 1.., local frame of each frame."""
        inv = self.inv_yaw[1:]
        lin = quat.rotate(inv, (self.root_pos[1:] - self.root_pos[:-1]) / self.dt)
        dq = quat.mul(self.root_quat[1:], quat.conj(self.root_quat[:-1]))
        ang = quat.rotate(inv, quat.to_rotvec(dq) / self.dt)
        return np.concatenate([lin, ang], axis=1)

    def ee_velocity(self):
        w = self.world[:, self.ee]
        v = (w[1:] - w[:-1]) / self.dt
        return quat.rotate(self.inv_yaw[1:, None], v).reshape(len(v), -1)


def human_states(traj: Trajectory) -> np.ndarray:
    """Human states for frames ``1 .. T-1`` as a ``(T-1, 92)`` array."""
    _check_human(traj.skeleton)
    if len(traj) < 2:
        return np.zeros((0, HUMAN_LAYOUT.size))
    k = _Kin(traj, 0, len(traj))
    n = len(traj) - 1
    out = np.concatenate(
        [
            k.root_pos[1:, 2:3],
            k.local_orientation[1:],
            k.root_velocity(),
            k.local[1:].reshape(n, -1),
            k.local[1:, k.ee].reshape(n, -1),
            k.ee_velocity(),
        ],
        axis=1,
    )
    return out


def character_states(traj: Trajectory) -> np.ndarray:
    """Character states for frames ``1 .. T-1`` as a ``(T-1, 17 + dof + 6 n_ee)`` array."""
    sk = traj.skeleton
    size = character_state_size(sk)
    if len(traj) < 2:
        return np.zeros((0, size))
    k = _Kin(traj, 0, len(traj))
    n = len(traj) - 1
    rel_loc = quat.rotate(k.inv_yaw[:-1], k.root_pos[1:] - k.root_pos[:-1])[:, :2]
    rel_rot = quat.canonical(quat.mul(k.inv_yaw[:-1], k.yaw[1:]))
    out = np.concatenate(
        [
            k.root_pos[1:, 2:3],
            k.local_orientation[1:],
            rel_loc,
            rel_rot,
            k.root_velocity(),
            k.joint_values[1:],
            k.local[1:, k.ee].reshape(n, -1),
            k.ee_velocity(),
        ],
        axis=1,
    )
    assert out.shape[1] == size
    return out


def _check_t(traj: Trajectory, t: int):
    if t == 0:
        raise ValidationError("frame 0 has no previous frame to difference against", field="t")
    if not 0 < t < len(traj):
        raise ValidationError(f"frame index {t} outside [1, {len(traj)})", field="t")


def extract_human_state(traj: Trajectory, t: int) -> np.ndarray:
    _check_t(traj, t)
    return human_states(traj.slice(0, t + 1))[-1]


def extract_character_state(traj: Trajectory, t: int, skeleton: Skeleton | None = None) -> np.ndarray:
    _check_t(traj, t)
    if skeleton is not None and skeleton != traj.skeleton:
        raise ValidationError("skeleton does not match the trajectory's skeleton", field="skeleton")
    return character_states(traj.slice(0, t + 1))[-1]


def validate_character_state(x, layout: StateLayout, tol: float = 1e-6):
    """Raise if ``x`` (one state or a batch) breaks the layout invariants."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != layout.size:
        raise DimensionError(f"state has length {x.shape[-1]}, expected {layout.size}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("state contains non-finite values")
    parts = layout.unpack(x)
    for name in layout.quaternion_blocks:
        err = np.max(np.abs(np.linalg.norm(parts[name], axis=-1) - 1.0))
        if err > tol:
            raise ValidationError(f"quaternion norm off by {err:.3g}", field=name)


def states_to_trajectory(
    states: np.ndarray,
    skeleton: Skeleton,
    dt: float,
    origin=(0.0, 0.0),
    heading: float = 0.0,
) -> Trajectory:
    """Integrate a character state sequence back into world-space poses.

    Frame 0 is placed at ``origin`` facing ``heading``; later frames integrate
    the relative root displacement and heading change of each state.
    """
    layout = character_layout(skeleton)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    parts = layout.unpack(states)
    n = len(states)
    rel = quat.normalize(parts["rel_root_orientation"])
    dyaw = 2.0 * np.arctan2(rel[:, 3], rel[:, 0])
    yaw = np.empty(n)
    xy = np.empty((n, 2))
    yaw[0] = heading
    xy[0] = origin
    for t in range(1, n):
        c, s = np.cos(yaw[t - 1]), np.sin(yaw[t - 1])
        d = parts["rel_root_location"][t]
        xy[t] = xy[t - 1] + np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]])
        yaw[t] = yaw[t - 1] + dyaw[t]
    root_pos = np.column_stack([xy, parts["root_height"][:, 0]])
    root_quat = quat.normalize(quat.mul(quat.yaw(yaw), quat.normalize(parts["root_orientation"])))
    return Trajectory(skeleton, dt, root_pos, root_quat, parts["joint_pose"])
