"""Minimal BVH reader: HIERARCHY with OFFSET/CHANNELS/End Site and a MOTION block.

Coordinates are taken as they appear in the file (no axis conversion);
``scale`` converts units. Euler channels are applied in the order listed,
each about the joint's own moving axes.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from ace.errors import ParseError
from ace.kinematics import quat
from ace.kinematics.skeleton import EndEffector, Joint, Skeleton, Trajectory, fk_arrays

_POS = ("Xposition", "Yposition", "Zposition")
_ROT = ("Xrotation", "Yrotation", "Zrotation")


class _Lines:
    def __init__(self, text: str):
        self.items = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
        self.k = 0

    @property
    def lineno(self) -> int:
        if self.k < len(self.items):
            return self.items[self.k][0]
        return self.items[-1][0] if self.items else 1

    def peek(self) -> list[str]:
        if self.k >= len(self.items):
            raise ParseError("unexpected end of file", line=self.lineno)
        return self.items[self.k][1]

    def next(self) -> list[str]:
        toks = self.peek()
        self.k += 1
        return toks

    def expect(self, word: str) -> list[str]:
        line = self.lineno
        toks = self.next()
        if toks[0] != word:
            raise ParseError(f"expected {word!r}, found {toks[0]!r}", line=line)
        return toks

    def done(self) -> bool:
        return self.k >= len(self.items)


def _floats(toks, line):
    try:
        return [float(t) for t in toks]
    except ValueError as exc:
        raise ParseError(f"not a number: {exc}", line=line) from None


def _role(name: str) -> str:
    n = name.lower()
    if any(k in n for k in ("foot", "toe", "ankle")):
        return "foot"
    if "head" in n:
        return "head"
    return "hand"


def _parse_joint(lines: _Lines, name, parent, joints, channels, end_sites):
    lines.expect("{")
    line = lines.lineno
    toks = lines.expect("OFFSET")
    if len(toks) != 4:
        raise ParseError("OFFSET needs three values", line=line)
    offset = _floats(toks[1:], line)
    chans: list[str] = []
    if lines.peek()[0] == "CHANNELS":
        line = lines.lineno
        toks = lines.next()
        try:
            n = int(toks[1])
        except (IndexError, ValueError):
            raise ParseError("CHANNELS needs a count", line=line) from None
        chans = toks[2:]
        if len(chans) != n:
            raise ParseError(f"CHANNELS declares {n} channels but lists {len(chans)}", line=line)
        for c in chans:
            if c not in _POS + _ROT:
                raise ParseError(f"unknown channel {c!r}", line=line)
        if parent is not None and any(c in _POS for c in chans):
            raise ParseError("translation channels are only supported on the root", line=line)
    index = len(joints)
    joints.append((name, parent, offset, chans))
    channels.append(chans)
    while True:
        line = lines.lineno
        toks = lines.next()
        if toks[0] == "}":
            return
        if toks[0] == "JOINT" and len(toks) >= 2:
            _parse_joint(lines, toks[1], index, joints, channels, end_sites)
        elif toks[0] == "End" and len(toks) >= 2 and toks[1] == "Site":
            lines.expect("{")
            line = lines.lineno
            t2 = lines.expect("OFFSET")
            off = _floats(t2[1:], line)
            if len(off) != 3:
                raise ParseError("OFFSET needs three values", line=line)
            lines.expect("}")
            joints.append((f"{name}_end", index, off, []))
            channels.append([])
            end_sites.append(len(joints) - 1)
        else:
            raise ParseError(f"unexpected token {toks[0]!r}", line=line)


def import_bvh(text: str, scale: float = 1.0, name: str = "bvh") -> Trajectory:
    """Parse BVH text into a :class:`Trajectory` on a freshly built skeleton."""
    lines = _Lines(text)
    lines.expect("HIERARCHY")
    line = lines.lineno
    toks = lines.expect("ROOT")
    if len(toks) < 2:
        raise ParseError("ROOT needs a name", line=line)
    raw, channels, end_sites = [], [], []
    _parse_joint(lines, toks[1], None, raw, channels, end_sites)

    lines.expect("MOTION")
    line = lines.lineno
    toks = lines.next()
    if toks[0] != "Frames:" or len(toks) != 2:
        raise ParseError("expected 'Frames: N'", line=line)
    try:
        n_frames = int(toks[1])
    except ValueError:
        raise ParseError(f"bad frame count {toks[1]!r}", line=line) from None
    line = lines.lineno
    toks = lines.next()
    if toks[:2] != ["Frame", "Time:"] or len(toks) != 3:
        raise ParseError("expected 'Frame Time: dt'", line=line)
    dt = _floats(toks[2:], line)[0]
    if dt <= 0:
        raise ParseError("frame time must be positive", line=line)

    width = sum(len(c) for c in channels)
    rows = []
    while not lines.done():
        line = lines.lineno
        vals = _floats(lines.next(), line)
        if len(vals) != width:
            raise ParseError(f"row has {len(vals)} values, channels declare {width}", line=line)
        rows.append(vals)
    if len(rows) != n_frames:
        raise ParseError(f"header declares {n_frames} frames but {len(rows)} rows follow", line=line)
    data = np.array(rows, dtype=np.float64).reshape(n_frames, width)

    # skeleton: the root carries the pose's root transform, other joints rotate freely
    joints = []
    for i, (jname, parent, offset, chans) in enumerate(raw):
        off = tuple(scale * v for v in offset)
        if parent is None:
            joints.append(Joint(jname, None))
        else:
            kind = "revolute3" if any(c in _ROT for c in chans) else "fixed"
            joints.append(Joint(jname, parent, off, kind))
    ees = tuple(EndEffector(j, _role(raw[raw[j][1]][0])) for j in end_sites)
    locomotion = "legged" if any(e.role == "foot" for e in ees) else "floating"
    probe = Skeleton(name, tuple(joints), ees, 1.0, locomotion)

    rp = np.tile(np.array(raw[0][2]) * scale, (n_frames, 1))
    rq = np.tile([1.0, 0.0, 0.0, 0.0], (n_frames, 1))
    jv = np.zeros((n_frames, probe.dof))
    offs = probe.dof_offsets
    col = 0
    for i, chans in enumerate(channels):
        block = data[:, col : col + len(chans)]
        col += len(chans)
        rot = [c for c in chans if c in _ROT]
        for k, c in enumerate(chans):
            if c in _POS:
                rp[:, _POS.index(c)] += scale * block[:, k]
        if not rot:
            continue
        order = "".join(c[0] for c in rot)  # uppercase letters mean intrinsic axes in scipy
        angles = block[:, [chans.index(c) for c in rot]]
        r = Rotation.from_euler(order, angles, degrees=True)
        if i == 0:
            rq = quat.from_xyzw(r.as_quat())
        else:
            jv[:, offs[i] : offs[i] + 3] = r.as_rotvec()

    # body length: extent of the rest pose, falling back to 1 for degenerate rigs
    rest, _ = fk_arrays(probe, np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]]), np.zeros((1, probe.dof)))
    extent = float(np.max(np.ptp(rest[0], axis=0)))
    sk = Skeleton(name, tuple(joints), ees, extent if extent > 1e-9 else 1.0, locomotion)
    return Trajectory(sk, dt, rp, rq, jv, {"source": "bvh"})
