"""JSON motion and dataset files.

A motion file is ``{skeleton, skeleton_id, dt, meta, frames}`` where every frame is
``{root_position, root_orientation, joint_values}``. A dataset file wraps a
list of ``{dt, frames, meta}`` entries under one skeleton. Floats are written
with ``repr`` precision so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ace.autodiff.checkpoint import atomic_write
from ace.dataset import SPECIES, MotionDataset
from ace.errors import ValidationError
from ace.kinematics.skeleton import Skeleton, Trajectory

DATASET_FORMAT = "ace-motion-dataset"


def _frames(traj: Trajectory) -> list[dict]:
    return [
        {
            "root_position": p.tolist(),
            "root_orientation": q.tolist(),
            "joint_values": v.tolist(),
        }
        for p, q, v in zip(traj.root_positions, traj.root_orientations, traj.joint_values)
    ]


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {type(value).__name__}", field=path)
    return float(value)


def _vector(value, n, path):
    if not isinstance(value, list) or len(value) != n:
        raise ValidationError(f"expected a list of {n} numbers", field=path)
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _require(doc, key, path):
    if not isinstance(doc, dict):
        raise ValidationError("expected an object", field=path or "<root>")
    if key not in doc:
        raise ValidationError("missing field", field=f"{path}.{key}" if path else key)
    return doc[key]


def _parse_trajectory(doc: dict, skeleton: Skeleton, path: str) -> Trajectory:
    dt = _number(_require(doc, "dt", path), f"{path}.dt" if path else "dt")
    frames = _require(doc, "frames", path)
    fpath = f"{path}.frames" if path else "frames"
    if not isinstance(frames, list):
        raise ValidationError("expected a list", field=fpath)
    dof = skeleton.dof
    rp, rq, jv = [], [], []
    for i, fr in enumerate(frames):
        p = f"{fpath}[{i}]"
        rp.append(_vector(_require(fr, "root_position", p), 3, f"{p}.root_position"))
        rq.append(_vector(_require(fr, "root_orientation", p), 4, f"{p}.root_orientation"))
        jv.append(_vector(_require(fr, "joint_values", p), dof, f"{p}.joint_values"))
    meta = doc.get("meta", {})
    try:
        return Trajectory(
            skeleton,
            dt,
            np.array(rp).reshape(-1, 3),
            np.array(rq).reshape(-1, 4),
            np.array(jv).reshape(-1, dof),
            dict(meta),
        )
    except ValidationError as exc:
        raise ValidationError(str(exc), field=path or None) from None


def motion_to_dict(traj: Trajectory) -> dict:
    return {
        "skeleton": traj.skeleton.to_dict(),
        "skeleton_id": traj.skeleton_id,
        "dt": traj.dt,
        "meta": dict(traj.meta),
        "frames": _frames(traj),
    }


def motion_from_dict(doc: dict) -> Trajectory:
    skeleton = Skeleton.from_dict(_require(doc, "skeleton", ""))
    sid = doc.get("skeleton_id", skeleton.name)
    if sid != skeleton.name:
        raise ValidationError(f"skeleton_id {sid!r} does not match skeleton {skeleton.name!r}", field="skeleton_id")
    return _parse_trajectory(doc, skeleton, "")


def save_motion(path, traj: Trajectory) -> None:
    atomic_write(path, json.dumps(motion_to_dict(traj)))


def load_motion(path) -> Trajectory:
    return motion_from_dict(_read_json(path))


def dataset_to_dict(ds: MotionDataset) -> dict:
    return {
        "format": DATASET_FORMAT,
        "species": ds.species,
        "skeleton": ds.skeleton.to_dict(),
        "skeleton_id": ds.skeleton.name,
        "trajectories": [
            {"dt": t.dt, "meta": dict(t.meta), "frames": _frames(t)} for t in ds.trajectories
        ],
    }


def dataset_from_dict(doc: dict) -> MotionDataset:
    fmt = _require(doc, "format", "")
    if fmt != DATASET_FORMAT:
        raise ValidationError(f"unexpected format {fmt!r}", field="format")
    species = _require(doc, "species", "")
    if species not in SPECIES:
        raise ValidationError(f"unknown species {species!r}", field="species")
    skeleton = Skeleton.from_dict(_require(doc, "skeleton", ""))
    trajs = _require(doc, "trajectories", "")
    if not isinstance(trajs, list):
        raise ValidationError("expected a list", field="trajectories")
    parsed = [_parse_trajectory(t, skeleton, f"trajectories[{i}]") for i, t in enumerate(trajs)]
    return MotionDataset(skeleton, tuple(parsed), species)


def save_dataset(path, ds: MotionDataset) -> None:
    atomic_write(path, json.dumps(dataset_to_dict(ds)))


def load_dataset(path) -> MotionDataset:
    return dataset_from_dict(_read_json(path))


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}", field="path") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON at line {exc.lineno}: {exc.msg}", field="path") from None
