"""Articulated skeletons, poses, trajectories and forward kinematics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ace.errors import DegenerateFrameError, DimensionError, ValidationError
from ace.kinematics import quat

JOINT_KINDS = {"revolute3": 3, "revolute1": 1, "prismatic": 1, "fixed": 0}
EE_ROLES = ("foot", "hand", "head")
FACING_EPS = 1e-6


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    kind: str = "fixed"
    axis: tuple[float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        if self.kind not in JOINT_KINDS:
            raise ValidationError(f"unknown joint kind {self.kind!r}", field=f"joints.{self.name}.kind")
        if self.kind in ("revolute1", "prismatic"):
            if self.axis is None:
                raise ValidationError("1-dof joints need an axis", field=f"joints.{self.name}.axis")
            a = np.asarray(self.axis, dtype=np.float64)
            n = np.linalg.norm(a)
            if a.shape != (3,) or n == 0:
                raise ValidationError("axis must be a nonzero 3-vector", field=f"joints.{self.name}.axis")
            object.__setattr__(self, "axis", tuple(float(v) for v in a / n))
        elif self.axis is not None:
            object.__setattr__(self, "axis", tuple(float(v) for v in self.axis))

    @property
    def dof(self) -> int:
        return JOINT_KINDS[self.kind]


@dataclass(frozen=True)
class EndEffector:
    joint: int
    role: str

    def __post_init__(self):
        if self.role not in EE_ROLES:
            raise ValidationError(f"unknown end-effector role {self.role!r}", field="end_effectors.role")


@dataclass(frozen=True)
class Skeleton:
    """Joint tree in topological order; joint 0 is the root.

    The root's world transform is the pose's root position/orientation, so the
    root joint itself must be ``fixed``.
    """

    name: str
    joints: tuple[Joint, ...]
    end_effectors: tuple[EndEffector, ...]
    body_length: float
    locomotion: str = "legged"

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "end_effectors", tuple(self.end_effectors))
        if not self.joints:
            raise ValidationError("skeleton has no joints", field="joints")
        if self.joints[0].parent is not None or self.joints[0].kind != "fixed":
            raise ValidationError("joint 0 must be a fixed root without parent", field="joints.0")
        for i, j in enumerate(self.joints[1:], start=1):
            if j.parent is None or not (0 <= j.parent < i):
                raise ValidationError(
                    f"parent index {j.parent} of joint {i} must be in [0, {i})", field=f"joints.{i}.parent"
                )
        if not self.body_length > 0:
            raise ValidationError("must be positive", field="body_length")
        parents = {j.parent for j in self.joints}
        for k, ee in enumerate(self.end_effectors):
            if not 0 <= ee.joint < len(self.joints):
                raise ValidationError(f"joint {ee.joint} out of range", field=f"end_effectors.{k}.joint")
            if ee.joint in parents:
                raise ValidationError(f"joint {ee.joint} is not a leaf", field=f"end_effectors.{k}.joint")
        if self.locomotion not in ("legged", "wheeled", "floating"):
            raise ValidationError(f"unknown locomotion {self.locomotion!r}", field="locomotion")
        if self.locomotion == "legged" and not self.foot_indices:
            raise ValidationError("legged skeletons need at least one foot", field="end_effectors")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_ee(self) -> int:
        return len(self.end_effectors)

    @cached_property
    def dof_offsets(self) -> np.ndarray:
        """Start index of each joint's coordinates in ``joint_values`` (length J+1)."""
        return np.concatenate([[0], np.cumsum([j.dof for j in self.joints])]).astype(int)

    @property
    def dof(self) -> int:
        return int(self.dof_offsets[-1])

    @property
    def ee_joints(self) -> list[int]:
        return [e.joint for e in self.end_effectors]

    @property
    def foot_indices(self) -> list[int]:
        return [e.joint for e in self.end_effectors if e.role == "foot"]

    @property
    def parents(self) -> np.ndarray:
        return np.array([-1 if j.parent is None else j.parent for j in self.joints])

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)

    def scaled(self, s: float) -> "Skeleton":
        """Uniformly scaled copy (offsets and body length)."""
        joints = tuple(
            Joint(j.name, j.parent, tuple(s * np.asarray(j.offset)), j.kind, j.axis) for j in self.joints
        )
        return Skeleton(self.name, joints, self.end_effectors, self.body_length * s, self.locomotion)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "body_length": self.body_length,
            "locomotion": self.locomotion,
            "joints": [
                {
                    "name": j.name,
                    "parent": j.parent,
                    "offset": list(j.offset),
                    "kind": j.kind,
                    "axis": None if j.axis is None else list(j.axis),
                }
                for j in self.joints
            ],
            "end_effectors": [{"joint": e.joint, "role": e.role} for e in self.end_effectors],
            "foot_indices": self.foot_indices,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        try:
            joints = tuple(
                Joint(
                    name=str(j["name"]),
                    parent=None if j["parent"] is None else int(j["parent"]),
                    offset=tuple(j["offset"]),
                    kind=j["kind"],
                    axis=None if j.get("axis") is None else tuple(j["axis"]),
                )
                for j in d["joints"]
            )
            ees = tuple(EndEffector(int(e["joint"]), e["role"]) for e in d["end_effectors"])
            return cls(
                name=str(d["name"]),
                joints=joints,
                end_effectors=ees,
                body_length=float(d["body_length"]),
                locomotion=d.get("locomotion", "legged"),
            )
        except KeyError as exc:
            raise ValidationError("missing field", field=f"skeleton.{exc.args[0]}") from None


@dataclass(frozen=True)
class Pose:
    root_position: np.ndarray
    root_orientation: np.ndarray
    joint_values: np.ndarray

    def __post_init__(self):
        for name in ("root_position", "root_orientation", "joint_values"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.root_position.shape != (3,):
            raise DimensionError("root_position must be a 3-vector")
        if self.root_orientation.shape != (4,):
            raise DimensionError("root_orientation must be a quaternion (w, x, y, z)")
        if abs(np.linalg.norm(self.root_orientation) - 1.0) > 1e-6:
            raise ValidationError("quaternion is not unit length", field="root_orientation")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Frames stored as stacked arrays; :attr:`frames` exposes them as poses."""

    skeleton: Skeleton
    dt: float
    root_positions: np.ndarray
    root_orientations: np.ndarray
    joint_values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (isinstance(self.dt, (int, float, np.floating)) and self.dt > 0):
            raise ValidationError("must be a positive number", field="dt")
        rp = np.array(self.root_positions, dtype=np.float64).reshape(-1, 3)
        rq = np.array(self.root_orientations, dtype=np.float64).reshape(-1, 4)
        jv = np.array(self.joint_values, dtype=np.float64).reshape(len(rp), -1)
        if len(rq) != len(rp):
            raise DimensionError("root position and orientation counts differ")
        if jv.shape[1] != self.skeleton.dof:
            raise DimensionError(f"joint_values has {jv.shape[1]} columns, skeleton has {self.skeleton.dof} dof")
        if len(rq) and np.max(np.abs(np.linalg.norm(rq, axis=1) - 1.0)) > 1e-6:
            raise ValidationError("quaternion is not unit length", field="frames.root_orientation")
        for name, arr in (("root_positions", rp), ("root_orientations", rq), ("joint_values", jv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_poses(cls, skeleton: Skeleton, dt: float, poses) -> "Trajectory":
        poses = list(poses)
        if not poses:
            return cls(skeleton, dt, np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, skeleton.dof)))
        return cls(
            skeleton,
            dt,
            np.stack([p.root_position for p in poses]),
            np.stack([p.root_orientation for p in poses]),
            np.stack([p.joint_values for p in poses]),
        )

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.skeleton == other.skeleton
            and self.dt == other.dt
            and np.array_equal(self.root_positions, other.root_positions)
            and np.array_equal(self.root_orientations, other.root_orientations)
            and np.array_equal(self.joint_values, other.joint_values)
        )

    __hash__ = object.__hash__

    @property
    def skeleton_id(self) -> str:
        return self.skeleton.name

    def __len__(self):
        return len(self.root_positions)

    def pose(self, t: int) -> Pose:
        return Pose(self.root_positions[t], self.root_orientations[t], self.joint_values[t])

    @property
    def frames(self) -> list[Pose]:
        return [self.pose(t) for t in range(len(self))]

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(
            self.skeleton,
            self.dt,
            self.root_positions[start:stop],
            self.root_orientations[start:stop],
            self.joint_values[start:stop],
            dict(self.meta),
        )

    def transformed(self, yaw: float, translation) -> "Trajectory":
        """Apply a global yaw about the origin followed by a translation."""
        qy = quat.yaw(np.float64(yaw))
        rp = quat.rotate(qy, self.root_positions) + np.asarray(translation, dtype=np.float64)
        rq = quat.mul(qy, self.root_orientations)
        return Trajectory(self.skeleton, self.dt, rp, rq, self.joint_values, dict(self.meta))

    def scaled(self, s: float) -> "Trajectory":
        """Uniform geometric scaling: skeleton offsets, root positions, prismatic coordinates."""
        jv = np.array(self.joint_values)
        offs = self.skeleton.dof_offsets
        for i, j in enumerate(self.skeleton.joints):
            if j.kind == "prismatic":
                jv[:, offs[i]] *= s
        return Trajectory(
            self.skeleton.scaled(s), self.dt, self.root_positions * s, self.root_orientations, jv, dict(self.meta)
        )


def _axis_angle_matrices(axis, angles):
    """Rodrigues formula for a fixed axis and a vector of angles -> (N, 3, 3)."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def fk_arrays(skeleton: Skeleton, root_positions, root_orientations, joint_values):
    """Vectorized forward kinematics over frames.

    Returns world joint positions ``(T, J, 3)`` and rotations ``(T, J, 3, 3)``.
    """
    rp = np.asarray(root_positions, dtype=np.float64).reshape(-1, 3)
    rq = np.asarray(root_orientations, dtype=np.float64).reshape(-1, 4)
    jv = np.asarray(joint_values, dtype=np.float64).reshape(len(rp), -1)
    if jv.shape[1] != skeleton.dof:
        raise DimensionError(f"pose has {jv.shape[1]} joint values, skeleton {skeleton.name!r} has {skeleton.dof}")
    n = len(rp)
    J = skeleton.n_joints
    pos = np.empty((n, J, 3))
    rot = np.empty((n, J, 3, 3))
    pos[:, 0] = rp
    rot[:, 0] = quat.to_matrix(rq)
    offs = skeleton.dof_offsets
    for i in range(1, J):
        j = skeleton.joints[i]
        Rp = rot[:, j.parent]
        local = np.asarray(j.offset)
        if j.kind == "prismatic":
            local = local + np.asarray(j.axis) * jv[:, offs[i], None]
            pos[:, i] = pos[:, j.parent] + np.einsum("nab,nb->na", Rp, local)
        else:
            pos[:, i] = pos[:, j.parent] + Rp @ local
        if j.kind == "revolute1":
            rot[:, i] = Rp @ _axis_angle_matrices(j.axis, jv[:, offs[i]])
        elif j.kind == "revolute3":
            rot[:, i] = Rp @ quat.to_matrix(quat.from_rotvec(jv[:, offs[i] : offs[i] + 3]))
        else:
            rot[:, i] = Rp
    return pos, rot


def forward_kinematics(skeleton: Skeleton, pose: Pose):
    """World joint positions ``(J, 3)`` and rotation matrices ``(J, 3, 3)`` for one pose."""
    if pose.joint_values.shape != (skeleton.dof,):
        raise DimensionError(
            f"pose has {pose.joint_values.size} joint values, skeleton {skeleton.name!r} has {skeleton.dof}"
        )
    pos, rot = fk_arrays(skeleton, pose.root_position[None], pose.root_orientation[None], pose.joint_values[None])
    return pos[0], rot[0]


def trajectory_fk(traj: Trajectory):
    return fk_arrays(traj.skeleton, traj.root_positions, traj.root_orientations, traj.joint_values)


@dataclass(frozen=True)
class LocalFrame:
    """Ground-projected root origin with a yaw-only orientation (x = facing, z = up)."""

    origin: np.ndarray
    heading: float

    @property
    def quat(self) -> np.ndarray:
        return quat.yaw(np.float64(self.heading))

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.heading), np.sin(self.heading)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def points_to_local(self, p):
        return (np.asarray(p) - self.origin) @ self.matrix

    def vectors_to_local(self, v):
        return np.asarray(v) @ self.matrix


def facing_heading(q, prev: float | None = None) -> float:
    f = quat.rotate(np.asarray(q, dtype=np.float64), np.array([1.0, 0.0, 0.0]))
    if np.hypot(f[0], f[1]) < FACING_EPS:
        if prev is None:
            raise DegenerateFrameError("facing direction is vertical; heading undefined")
        return float(prev)
    return float(np.arctan2(f[1], f[0]))


def local_frame(pose: Pose, prev_heading: float | None = None) -> LocalFrame:
    """Heading frame of a pose; a vertical facing reuses ``prev_heading`` or raises."""
    h = facing_heading(pose.root_orientation, prev_heading)
    return LocalFrame(np.array([pose.root_position[0], pose.root_position[1], 0.0]), h)


def headings(root_orientations) -> np.ndarray:
    """Per-frame heading; degenerate frames reuse the previous heading (first frame: +x)."""
    rq = np.asarray(root_orientations, dtype=np.float64).reshape(-1, 4)
    f = quat.rotate(rq, np.array([1.0, 0.0, 0.0]))
    norm = np.hypot(f[:, 0], f[:, 1])
    h = np.arctan2(f[:, 1], f[:, 0])
    bad = norm < FACING_EPS
    if np.any(bad):
        prev = 0.0
        for t in range(len(h)):
            if bad[t]:
                h[t] = prev
            prev = h[t]
    return h
