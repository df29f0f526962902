"""Built-in skeletons: the 17-joint reference human and three target characters.

Conventions: x forward, y left, z up, meters. Each character comes with a
:class:`CharacterRig` describing its legs (for analytic IK) and its arm
joints with sampling limits (for the procedural data generator).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ace.errors import ValidationError
from ace.kinematics.skeleton import EndEffector, Joint, Skeleton

X, Y, Z = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)


def human_skeleton() -> Skeleton:
    """Reference human: pelvis root, 16 ball joints, feet/hands/head end-effectors.

    Rest pose is standing with arms hanging; the pelvis is 0.95 m above the
    ground when the ankles are 0.07 m up. Overall height is about 1.7 m.
    """
    r3 = "revolute3"
    joints = [
        Joint("pelvis", None),
        Joint("r_hip", 0, (0.0, -0.1, 0.0), r3),
        Joint("r_knee", 1, (0.0, 0.0, -0.44), r3),
        Joint("r_ankle", 2, (0.0, 0.0, -0.44), r3),
        Joint("l_hip", 0, (0.0, 0.1, 0.0), r3),
        Joint("l_knee", 4, (0.0, 0.0, -0.44), r3),
        Joint("l_ankle", 5, (0.0, 0.0, -0.44), r3),
        Joint("spine", 0, (0.0, 0.0, 0.12), r3),
        Joint("thorax", 7, (0.0, 0.0, 0.25), r3),
        Joint("neck", 8, (0.0, 0.0, 0.2), r3),
        Joint("head", 9, (0.0, 0.0, 0.15), r3),
        Joint("l_shoulder", 8, (0.0, 0.18, 0.17), r3),
        Joint("l_elbow", 11, (0.0, 0.0, -0.28), r3),
        Joint("l_wrist", 12, (0.0, 0.0, -0.26), r3),
        Joint("r_shoulder", 8, (0.0, -0.18, 0.17), r3),
        Joint("r_elbow", 14, (0.0, 0.0, -0.28), r3),
        Joint("r_wrist", 15, (0.0, 0.0, -0.26), r3),
    ]
    ees = [
        EndEffector(6, "foot"),
        EndEffector(3, "foot"),
        EndEffector(13, "hand"),
        EndEffector(16, "hand"),
        EndEffector(10, "head"),
    ]
    return Skeleton("human17", tuple(joints), tuple(ees), body_length=1.7)


HUMAN_PELVIS_HEIGHT = 0.95
HUMAN_ANKLE_HEIGHT = 0.07


@dataclass(frozen=True)
class LegChain:
    """Abduction (x) / flexion (y) / knee (y) leg ending in a foot joint."""

    hip_x: int
    hip_y: int
    knee: int
    foot: int
    hip_position: tuple[float, float, float]  # hip_x joint in the body frame
    lateral: float  # signed y offset of hip_y from hip_x
    upper: float
    lower: float
    splay: float = 0.0  # forward shift of the default foothold from the hip

    @property
    def nominal_foot(self) -> np.ndarray:
        """Default foothold in the body frame, ignoring height."""
        return np.array([self.hip_position[0] + self.splay, self.hip_position[1] + self.lateral, 0.0])


@dataclass(frozen=True)
class CharacterRig:
    skeleton: Skeleton
    legs: tuple[LegChain, ...] = ()
    arm_joints: tuple[int, ...] = ()
    arm_limits: tuple[tuple[float, float], ...] = ()
    arm_rest: tuple[float, ...] = ()
    stand_height: float = 0.5
    min_effector_height: float = 0.05
    extras: dict = field(default_factory=dict)

    @property
    def legged(self) -> bool:
        return bool(self.legs)


def _add_leg(joints, name, hip, lateral, upper, lower, splay=0.0):
    base = len(joints)
    joints.append(Joint(f"{name}_hip_x", 0, hip, "revolute1", X))
    joints.append(Joint(f"{name}_hip_y", base, (0.0, lateral, 0.0), "revolute1", Y))
    joints.append(Joint(f"{name}_knee", base + 1, (0.0, 0.0, -upper), "revolute1", Y))
    joints.append(Joint(f"{name}_foot", base + 2, (0.0, 0.0, -lower), "fixed"))
    return LegChain(base, base + 1, base + 2, base + 3, hip, lateral, upper, lower, splay)


def spot_rig() -> CharacterRig:
    """Quadruped with a 6-dof arm: 12 leg dof + 6 arm dof = 18, 5 end-effectors."""
    joints = [Joint("body", None)]
    legs = []
    for name, sx, sy in (("fl", 1, 1), ("fr", 1, -1), ("hl", -1, 1), ("hr", -1, -1)):
        legs.append(_add_leg(joints, name, (0.29 * sx, 0.055 * sy, 0.0), 0.11 * sy, 0.32, 0.32, 0.06 * sx))
    a = len(joints)
    joints += [
        Joint("arm_sh0", 0, (0.25, 0.0, 0.09), "revolute1", Z),
        Joint("arm_sh1", a, (0.0, 0.0, 0.04), "revolute1", Y),
        Joint("arm_el0", a + 1, (0.34, 0.0, 0.0), "revolute1", Y),
        Joint("arm_el1", a + 2, (0.08, 0.0, 0.0), "revolute1", X),
        Joint("arm_wr0", a + 3, (0.26, 0.0, 0.0), "revolute1", Y),
        Joint("arm_wr1", a + 4, (0.04, 0.0, 0.0), "revolute1", X),
        Joint("gripper", a + 5, (0.1, 0.0, 0.0), "fixed"),
    ]
    ees = [EndEffector(leg.foot, "foot") for leg in legs] + [EndEffector(a + 6, "hand")]
    sk = Skeleton("spot", tuple(joints), tuple(ees), body_length=0.9)
    return CharacterRig(
        skeleton=sk,
        legs=tuple(legs),
        arm_joints=tuple(range(a, a + 6)),
        arm_limits=((-1.0, 1.0), (-1.5, 0.1), (0.2, 2.2), (-0.6, 0.6), (-1.0, 1.0), (-0.6, 0.6)),
        arm_rest=(0.0, -0.5, 1.0, 0.0, 0.0, 0.0),
        stand_height=0.5,
    )


def crab_rig() -> CharacterRig:
    """Hexapod with two 3-dof arms: 18 leg dof + 6 arm dof = 24."""
    joints = [Joint("body", None)]
    legs = []
    for i, (x, splay) in enumerate(((0.3, 0.1), (0.0, 0.0), (-0.3, -0.1))):
        for side, sy in (("l", 1), ("r", -1)):
            legs.append(_add_leg(joints, f"leg{i}{side}", (x, 0.14 * sy, 0.0), 0.14 * sy, 0.2, 0.24, splay))
    claws = []
    for side, sy in (("l", 1), ("r", -1)):
        a = len(joints)
        joints += [
            Joint(f"arm_{side}_yaw", 0, (0.34, 0.1 * sy, 0.05), "revolute1", Z),
            Joint(f"arm_{side}_pitch", a, (0.0, 0.0, 0.02), "revolute1", Y),
            Joint(f"arm_{side}_elbow", a + 1, (0.2, 0.0, 0.0), "revolute1", Y),
            Joint(f"claw_{side}", a + 2, (0.2, 0.0, 0.0), "fixed"),
        ]
        claws.append(a)
    ees = [EndEffector(leg.foot, "foot") for leg in legs] + [EndEffector(c + 3, "hand") for c in claws]
    sk = Skeleton("crab", tuple(joints), tuple(ees), body_length=0.7)
    arm_joints = tuple(j for c in claws for j in (c, c + 1, c + 2))
    limits = ((-0.6, 0.8), (-1.2, 0.3), (0.2, 2.0), (-0.8, 0.6), (-1.2, 0.3), (0.2, 2.0))
    return CharacterRig(
        skeleton=sk,
        legs=tuple(legs),
        arm_joints=arm_joints,
        arm_limits=limits,
        arm_rest=(0.3, -0.4, 1.0, -0.3, -0.4, 1.0),
        stand_height=0.36,
        extras={"max_stride": 0.18},
    )


def stretch_rig() -> CharacterRig:
    """Wheeled base with a lift and a three-stage telescoping arm (4 prismatic dof)."""
    joints = [
        Joint("base", None),
        Joint("mast", 0, (-0.05, 0.0, 0.1), "fixed"),
        Joint("lift", 1, (0.0, 0.0, 0.15), "prismatic", Z),
        Joint("arm0", 2, (0.0, -0.12, 0.0), "prismatic", (0.0, -1.0, 0.0)),
        Joint("arm1", 3, (0.0, -0.1, 0.0), "prismatic", (0.0, -1.0, 0.0)),
        Joint("arm2", 4, (0.0, -0.1, 0.0), "prismatic", (0.0, -1.0, 0.0)),
        Joint("gripper", 5, (0.0, -0.12, -0.05), "fixed"),
    ]
    sk = Skeleton("stretch", tuple(joints), (EndEffector(6, "hand"),), body_length=1.4, locomotion="wheeled")
    return CharacterRig(
        skeleton=sk,
        arm_joints=(2, 3, 4, 5),
        arm_limits=((0.0, 0.95), (0.0, 0.13), (0.0, 0.13), (0.0, 0.13)),
        arm_rest=(0.5, 0.0, 0.0, 0.0),
        stand_height=0.1,
        min_effector_height=0.0,
    )


RIGS = {"spot": spot_rig, "crab": crab_rig, "stretch": stretch_rig}


def get_rig(name: str) -> CharacterRig:
    try:
        return RIGS[name]()
    except KeyError:
        raise ValidationError(f"unknown character {name!r}; choose from {sorted(RIGS)}", field="character") from None
