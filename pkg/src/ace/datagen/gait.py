"""Procedural kinematic controller for legged and wheeled characters.

The root integrates smoothed velocity commands. Each leg runs a
stance/swing state machine driven by a shared phase clock: stance feet stay
planted, swing feet travel to a Raibert-style foothold along a lifted arc,
and joint angles come from analytic three-joint leg IK. Arms (if any) move
between random joint targets that pass a self-collision check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ace.errors import ValidationError
from ace.kinematics import quat
from ace.kinematics.characters import CharacterRig, LegChain
from ace.kinematics.skeleton import Trajectory, fk_arrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommandProfile:
    """Random target commands: forward speed, yaw rate and hold duration ranges."""

    lin_vel: tuple[float, float] = (-1.5, 5.0)
    ang_vel: tuple[float, float] = (-1.0, 1.0)
    hold: tuple[float, float] = (1.0, 3.0)
    stand_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("lin_vel", "ang_vel", "hold"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValidationError(f"range is not ordered: ({lo}, {hi})", field=name)
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.hold[0] <= 0:
            raise ValidationError("hold durations must be positive", field="hold")
        if not 0.0 <= self.stand_prob <= 1.0:
            raise ValidationError("must be a probability", field="stand_prob")

    def sample(self, rng: np.random.Generator, n_frames: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
        v = np.empty(n_frames)
        w = np.empty(n_frames)
        t = 0
        while t < n_frames:
            k = max(1, int(round(rng.uniform(*self.hold) / dt)))
            if rng.random() < self.stand_prob:
                vc, wc = 0.0, 0.0
            else:
                vc, wc = rng.uniform(*self.lin_vel), rng.uniform(*self.ang_vel)
            v[t : t + k] = vc
            w[t : t + k] = wc
            t += k
        return v, w


@dataclass(frozen=True)
class GaitSpec:
    """One gait: minimum stride frequency (Hz), duty factor, per-leg phase offsets.

    ``max_speed`` is the forward speed above which the next faster gait is used.
    """

    name: str
    stride_frequency: float
    duty_factor: float
    phase_offsets: tuple[float, ...]
    swing_height: float
    max_speed: float = float("inf")

    def __post_init__(self):
        if not 0.0 < self.duty_factor < 1.0:
            raise ValidationError("must lie in (0, 1)", field="duty_factor")
        if any(not 0.0 <= p < 1.0 for p in self.phase_offsets):
            raise ValidationError("offsets must lie in [0, 1)", field="phase_offsets")
        if self.stride_frequency <= 0 or self.swing_height < 0:
            raise ValidationError("stride frequency must be positive and swing height nonnegative")
        object.__setattr__(self, "phase_offsets", tuple(float(p) for p in self.phase_offsets))


QUADRUPED_GAITS = (
    GaitSpec("walk", 1.4, 0.75, (0.0, 0.5, 0.75, 0.25), 0.08, max_speed=0.8),
    GaitSpec("trot", 1.8, 0.5, (0.0, 0.5, 0.5, 0.0), 0.10, max_speed=2.6),
    GaitSpec("gallop", 2.4, 0.3, (0.0, 0.1, 0.55, 0.65), 0.12),
)

# legs ordered front-left, front-right, middle-left, middle-right, hind-left, hind-right
HEXAPOD_GAITS = (
    GaitSpec("wave", 1.2, 0.75, (0.0, 0.5, 0.25, 0.75, 0.5, 0.0), 0.06, max_speed=0.6),
    GaitSpec("tripod", 1.8, 0.5, (0.0, 0.5, 0.5, 0.0, 0.0, 0.5), 0.08),
)


def default_gaits(n_legs: int) -> tuple[GaitSpec, ...]:
    if n_legs == 4:
        return QUADRUPED_GAITS
    if n_legs == 6:
        return HEXAPOD_GAITS
    return (GaitSpec("alternate", 1.5, 0.6, tuple((i % 2) * 0.5 for i in range(n_legs)), 0.08),)


# ------------------------------------------------------------------ leg IK


def leg_ik(leg: LegChain, foot_body) -> tuple[np.ndarray, bool]:
    """Joint angles (abduction, hip flexion, knee) placing the foot at a body-frame point.

    Returns the angles and whether the target was reachable. Unreachable
    targets are pulled onto the workspace boundary.
    """
    d = np.asarray(foot_body, dtype=np.float64) - np.asarray(leg.hip_position)
    ly = leg.lateral
    r2 = d[1] ** 2 + d[2] ** 2 - ly**2
    ok = True
    if r2 < 1e-8:
        r2, ok = 1e-8, False
    zp = -np.sqrt(r2)
    a = np.arctan2(d[2], d[1]) - np.arctan2(zp, ly)
    X, Y = -d[0], -zp
    l1, l2 = leg.upper, leg.lower
    dist = np.hypot(X, Y)
    lo, hi = abs(l1 - l2) + 1e-6, (l1 + l2) * (1.0 - 1e-6)
    if not lo <= dist <= hi:
        ok = False
        s = np.clip(dist, lo, hi) / max(dist, 1e-12)
        X, Y, dist = X * s, Y * s, np.clip(dist, lo, hi)
    cos_c = np.clip((dist**2 - l1**2 - l2**2) / (2.0 * l1 * l2), -1.0, 1.0)
    c = -np.arccos(cos_c)
    b = np.arctan2(X, Y) - np.arctan2(l2 * np.sin(c), l1 + l2 * np.cos(c))
    return np.array([a, b, c]), ok


# ------------------------------------------------------------------ arm schedule


def _arm_schedule(rig: CharacterRig, rng, n_frames, dt, hold=(1.0, 3.0), tries=50):
    """Joint trajectories for the arm joints: cosine blends between sampled targets."""
    n = len(rig.arm_joints)
    if n == 0:
        return np.zeros((n_frames, 0))
    lo = np.array([l for l, _ in rig.arm_limits])
    hi = np.array([h for _, h in rig.arm_limits])
    rest = np.array(rig.arm_rest, dtype=np.float64)

    def acceptable(q):
        return _arm_pose_ok(rig, q)

    out = np.empty((n_frames, n))
    cur = rest.copy()
    t = 0
    while t < n_frames:
        nxt = cur
        for _ in range(tries):
            cand = rng.uniform(lo, hi)
            mid = 0.5 * (cur + cand)
            if acceptable(cand) and acceptable(mid):
                nxt = cand
                break
        k = max(2, int(round(rng.uniform(*hold) / dt)))
        s = 0.5 - 0.5 * np.cos(np.pi * np.arange(1, k + 1) / k)
        seg = cur + s[:, None] * (nxt - cur)
        out[t : t + k] = seg[: n_frames - t]
        t += k
        cur = nxt
    return out


def _arm_pose_ok(rig: CharacterRig, arm_q) -> bool:
    from ace.metrics import UFRThresholds, self_collision_flags

    sk = rig.skeleton
    jv = np.zeros(sk.dof)
    offs = sk.dof_offsets
    for leg in rig.legs:
        q, _ = leg_ik(leg, leg.nominal_foot - np.array([0.0, 0.0, rig.stand_height]))
        jv[offs[[leg.hip_x, leg.hip_y, leg.knee]]] = q
    jv[offs[list(rig.arm_joints)]] = arm_q
    pos, _ = fk_arrays(sk, np.array([[0.0, 0.0, rig.stand_height]]), np.array([[1.0, 0, 0, 0]]), jv[None])
    margin = UFRThresholds(contact_tolerance=0.03)
    if self_collision_flags(pos, sk, margin)[0]:
        return False
    hands = [e.joint for e in sk.end_effectors if e.role == "hand"]
    return bool(np.all(pos[0, hands, 2] >= rig.min_effector_height + 0.05))


# ------------------------------------------------------------------ controller


@dataclass
class _Leg:
    pos: np.ndarray
    swinging: bool = False
    k: int = 0  # frames elapsed in the current swing
    n: int = 0  # swing length in frames, the last one touches down
    start: np.ndarray | None = None
    target: np.ndarray | None = None
    height: float = 0.0
    planted_time: float = 0.0


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _rot2(psi):
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s], [s, c]])


def rollout_controller(
    rig: CharacterRig,
    v_cmd,
    w_cmd,
    dt: float = 1.0 / 30.0,
    gaits: tuple[GaitSpec, ...] | None = None,
    seed: int = 0,
    smoothing: float = 0.5,
    max_frequency: float = 5.0,
    max_stride: float | None = None,
    start_at_command: bool = True,
) -> Trajectory:
    """Roll out the controller for per-frame commands ``v_cmd`` (m/s) and ``w_cmd`` (rad/s)."""
    v_cmd = np.asarray(v_cmd, dtype=np.float64)
    w_cmd = np.asarray(w_cmd, dtype=np.float64)
    n = len(v_cmd)
    if n < 2:
        raise ValidationError("need at least two frames", field="n_frames")
    sk = rig.skeleton
    rng = np.random.default_rng(seed)
    gaits = gaits or default_gaits(len(rig.legs))
    for g in gaits:
        if rig.legged and len(g.phase_offsets) != len(rig.legs):
            raise ValidationError(f"gait {g.name!r} has {len(g.phase_offsets)} offsets for {len(rig.legs)} legs")
    leg_len = min((leg.upper + leg.lower for leg in rig.legs), default=1.0)
    if max_stride is None:
        max_stride = rig.extras.get("max_stride")
    if max_stride is None:
        max_stride = 0.8 * np.sqrt(max(leg_len**2 - rig.stand_height**2, 1e-4))
    alpha = 1.0 - np.exp(-dt / smoothing) if smoothing > 0 else 1.0

    offs = sk.dof_offsets
    jv = np.zeros((n, sk.dof))
    jv[:, offs[list(rig.arm_joints)]] = _arm_schedule(rig, rng, n, dt)
    root_p = np.zeros((n, 3))
    root_q = np.zeros((n, 4))

    v = v_cmd[0] if start_at_command else 0.0
    w = w_cmd[0] if start_at_command else 0.0
    psi, pos = 0.0, np.zeros(2)
    clock = 0.0
    gi = 0
    pitch = 0.0
    nominal = [leg.nominal_foot[:2] for leg in rig.legs]
    legs = [_Leg(pos=np.append(nom, 0.0)) for nom in nominal]
    n_ik_clamped = n_speed_clamped = 0

    for t in range(n):
        if t > 0:
            v_prev = v
            v += alpha * (v_cmd[t] - v)
            w += alpha * (w_cmd[t] - w)
            if rig.legged:
                g = gaits[gi]
                v_lim = max_stride * max_frequency / g.duty_factor
                if abs(v) > v_lim:
                    v = float(np.clip(v, -v_lim, v_lim))
                    n_speed_clamped += 1
            mid = psi + 0.5 * w * dt
            pos = pos + v * dt * np.array([np.cos(mid), np.sin(mid)])
            psi += w * dt
            pitch += alpha * (np.clip(-0.03 * (v - v_prev) / dt, -0.12, 0.12) - pitch)
        # gait selection with hysteresis
        while gi + 1 < len(gaits) and abs(v) > gaits[gi].max_speed + 0.1:
            gi += 1
        while gi > 0 and abs(v) < gaits[gi - 1].max_speed - 0.1:
            gi -= 1
        g = gaits[gi]
        reach = max((np.linalg.norm(nom) for nom in nominal), default=0.0)
        f = (abs(v) + abs(w) * reach) * g.duty_factor / max_stride
        f = float(np.clip(f, g.stride_frequency, max_frequency))
        if t > 0:
            clock += f * dt
        roll = float(np.clip(0.04 * w * v, -0.1, 0.1))
        bob = 0.012 * min(1.0, abs(v) / 2.0) * (0.5 - 0.5 * np.cos(4 * np.pi * clock)) if rig.legged else 0.0
        height = rig.stand_height - bob
        q = quat.mul(quat.yaw(psi), quat.from_rotvec(np.array([roll, pitch, 0.0])))
        root_p[t] = (pos[0], pos[1], height)
        root_q[t] = q
        if not rig.legged:
            continue

        t_stance = g.duty_factor / f
        t_swing = (1.0 - g.duty_factor) / f
        heading = _rot2(psi)
        for k, (leg, st) in enumerate(zip(rig.legs, legs)):
            phase = (clock + g.phase_offsets[k]) % 1.0
            want_swing = phase >= g.duty_factor
            home = pos + heading @ nominal[k]
            too_far = np.linalg.norm(st.pos[:2] - home) > 0.9 * max_stride
            if t > 0 and not st.swinging:
                st.planted_time += dt
                if (want_swing and st.planted_time >= 0.5 * t_stance) or too_far:
                    st.swinging, st.k = True, 0
                    st.n = max(3, int(round(t_swing / dt)))
                    st.start = st.pos.copy()
            if st.swinging:
                st.k += 1
                if st.k < st.n:
                    # keep re-aiming until the foot is over its landing spot
                    remain = (st.n - st.k) * dt
                    psi_p = psi + w * remain
                    pos_p = pos + v * remain * np.array([np.cos(psi), np.sin(psi)])
                    target = pos_p + _rot2(psi_p + 0.5 * w * t_stance) @ nominal[k]
                    st.target = target + _rot2(psi_p) @ np.array([0.5 * v * t_stance, 0.0])
                    step = np.linalg.norm(st.target - st.start[:2])
                    st.height = max(st.height if st.k > 1 else 0.0, g.swing_height * min(1.0, step / 0.05))
                    # lift first, travel over the middle frames, land vertically
                    u = _smoothstep((st.k - 1) / max(st.n - 2, 1))
                    xy = st.start[:2] + u * (st.target - st.start[:2])
                    st.pos = np.append(xy, st.height * np.sin(np.pi * st.k / st.n))
                else:
                    st.pos = np.append(st.target, 0.0)
                    st.swinging, st.planted_time = False, 0.0
            foot_body = quat.rotate(quat.conj(q), st.pos - root_p[t])
            angles, ok = leg_ik(leg, foot_body)
            if not ok:
                n_ik_clamped += 1
            jv[t, offs[[leg.hip_x, leg.hip_y, leg.knee]]] = angles

    if n_ik_clamped:
        log.info("%s: %d foot targets clamped to the leg workspace", sk.name, n_ik_clamped)
    if n_speed_clamped:
        log.info("%s: speed command clamped on %d frames", sk.name, n_speed_clamped)
    meta = {"ik_clamped": n_ik_clamped, "speed_clamped": n_speed_clamped}
    return Trajectory(sk, dt, root_p, root_q, jv, meta)
