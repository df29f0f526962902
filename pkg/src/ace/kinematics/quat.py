"""Quaternion helpers in (w, x, y, z) order, vectorized over leading axes.

Conversions go through :class:`scipy.spatial.transform.Rotation`, which uses
scalar-last order internally.
"""

import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def to_xyzw(q):
    q = np.asarray(q, dtype=np.float64)
    return np.concatenate([q[..., 1:], q[..., :1]], axis=-1)


def from_xyzw(q):
    q = np.asarray(q, dtype=np.float64)
    return np.concatenate([q[..., 3:], q[..., :3]], axis=-1)


def to_rotation(q) -> Rotation:
    return Rotation.from_quat(to_xyzw(np.reshape(q, (-1, 4))))


def mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    n = np.where(n > 0, n, 1.0)
    return q / n


def canonical(q):
    """Unit quaternion with nonnegative w, so equal rotations compare equal."""
    q = normalize(q)
    return np.where(q[..., :1] < 0, -q, q)


def rotate(q, v):
    """Rotate vectors ``v`` by unit quaternions ``q`` (broadcasting)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def to_matrix(q):
    q = normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def from_matrix(m):
    m = np.array(m, dtype=np.float64)  # scipy needs a writable buffer
    q = from_xyzw(Rotation.from_matrix(m.reshape(-1, 3, 3)).as_quat())
    return q.reshape(m.shape[:-2] + (4,))


def from_rotvec(r):
    r = np.array(r, dtype=np.float64)
    q = from_xyzw(Rotation.from_rotvec(r.reshape(-1, 3)).as_quat())
    return q.reshape(r.shape[:-1] + (4,))


def to_rotvec(q):
    q = np.asarray(q, dtype=np.float64)
    r = to_rotation(canonical(q)).as_rotvec()
    return r.reshape(q.shape[:-1] + (3,))


def about_axis(axis, angle):
    """Quaternions for rotations by ``angle`` (array) about a fixed unit ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def yaw(angle):
    return about_axis([0.0, 0.0, 1.0], angle)


def yaw_angle(q):
    """Heading angle of the rotation's +x axis projected on the ground plane."""
    fx = rotate(q, np.array([1.0, 0.0, 0.0]))
    return np.arctan2(fx[..., 1], fx[..., 0])
