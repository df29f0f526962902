"""Body-length-normalized feature function and end-effector correspondence.

Features of a state are: root height, root orientation (4), root linear
velocity (3), root angular velocity (3), and the local positions of the
mapped end-effectors. Heights, positions and linear velocities are divided by
the body length, so uniform scaling of a character leaves them unchanged.
Because every entry is either copied or scaled, the feature function is a
fixed gather-and-scale of the state vector.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ace.errors import ValidationError
from ace.kinematics.skeleton import Skeleton
from ace.kinematics.state import HUMAN_LAYOUT, StateLayout, character_layout

VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class EEMapping:
    """``pairs[j]`` is the human end-effector index assigned to character end-effector ``j``."""

    pairs: tuple[int, ...]
    source: str = "auto"
    kl: tuple[tuple[float, ...], ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(int(i) for i in self.pairs))
        if self.source not in ("auto", "manual"):
            raise ValidationError(f"unknown mapping source {self.source!r}", field="source")
        if any(i < 0 for i in self.pairs):
            raise ValidationError("end-effector indices must be nonnegative", field="pairs")

    def __len__(self):
        return len(self.pairs)

    def check(self, char_skeleton: Skeleton, human_skeleton: Skeleton):
        if len(self.pairs) != char_skeleton.n_ee:
            raise ValidationError(
                f"mapping covers {len(self.pairs)} end-effectors, character has {char_skeleton.n_ee}",
                field="pairs",
            )
        for j, i in enumerate(self.pairs):
            if i >= human_skeleton.n_ee:
                raise ValidationError(f"human end-effector {i} does not exist", field=f"pairs[{j}]")

    def to_dict(self) -> dict:
        d = {"pairs": list(self.pairs), "source": self.source}
        if self.kl is not None:
            d["kl"] = [list(r) for r in self.kl]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EEMapping":
        kl = d.get("kl")
        return cls(tuple(d["pairs"]), d.get("source", "auto"), None if kl is None else tuple(map(tuple, kl)))


# ------------------------------------------------------------ feature function


@dataclass(frozen=True)
class FeatureSpec:
    """Gather indices and per-entry scales that turn a state into features."""

    index: np.ndarray
    scale: np.ndarray

    @property
    def size(self) -> int:
        return int(self.index.size)

    def __call__(self, states) -> np.ndarray:
        return np.asarray(states)[..., self.index] * self.scale


def _spec(layout: StateLayout, body_length: float, ee_order) -> FeatureSpec:
    s = layout.slices
    bl = 1.0 / body_length
    idx, scale = [s["root_height"].start], [bl]
    idx += list(range(s["root_orientation"].start, s["root_orientation"].stop))
    scale += [1.0] * 4
    v0 = s["root_lin_ang_vel"].start
    idx += list(range(v0, v0 + 6))
    scale += [bl] * 3 + [1.0] * 3
    e0 = s["ee_positions"].start
    for e in ee_order:
        idx += [e0 + 3 * e, e0 + 3 * e + 1, e0 + 3 * e + 2]
        scale += [bl] * 3
    return FeatureSpec(np.array(idx, dtype=np.intp), np.array(scale))


def character_features(skeleton: Skeleton, mapping: EEMapping | None = None) -> FeatureSpec:
    """Feature spec for character states; all character end-effectors, in order."""
    n = skeleton.n_ee
    if mapping is not None and len(mapping) != n:
        raise ValidationError(f"mapping covers {len(mapping)} end-effectors, character has {n}", field="pairs")
    return _spec(character_layout(skeleton), skeleton.body_length, range(n))


def human_features(skeleton: Skeleton, mapping: EEMapping) -> FeatureSpec:
    """Feature spec for human states; the human end-effector mapped to each character one."""
    for j, i in enumerate(mapping.pairs):
        if i >= skeleton.n_ee:
            raise ValidationError(f"human end-effector {i} does not exist", field=f"pairs[{j}]")
    return _spec(HUMAN_LAYOUT, skeleton.body_length, mapping.pairs)


def feature_fn(state, skeleton: Skeleton, mapping: EEMapping, species: str | None = None) -> np.ndarray:
    """Features of a human or character state (or a batch of them).

    ``species`` is inferred from the state width when omitted.
    """
    state = np.asarray(state, dtype=np.float64)
    if species is None:
        species = "human" if state.shape[-1] == HUMAN_LAYOUT.size and skeleton.n_joints == 17 else "character"
    spec = human_features(skeleton, mapping) if species == "human" else character_features(skeleton, mapping)
    width = HUMAN_LAYOUT.size if species == "human" else character_layout(skeleton).size
    if state.shape[-1] != width:
        raise ValidationError(f"{species} state has width {state.shape[-1]}, expected {width}", field="state")
    return spec(state)


# ------------------------------------------------------------ auto mapping


def ee_positions(states: np.ndarray, layout: StateLayout, body_length: float, n_ee: int) -> np.ndarray:
    """Normalized local end-effector positions as ``(n_ee, N, 3)``."""
    block = np.asarray(states)[:, layout.slices["ee_positions"]] / body_length
    return block.reshape(len(block), n_ee, 3).transpose(1, 0, 2)


def diag_gaussian(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) == 0:
        raise ValidationError("no samples to fit", field="dataset")
    return x.mean(axis=0), np.maximum(x.var(axis=0), VAR_FLOOR)


def kl_diag(mu_p, var_p, mu_q, var_q) -> float:
    """KL(p || q) between diagonal Gaussians."""
    return float(0.5 * np.sum(np.log(var_q / var_p) + (var_p + (mu_p - mu_q) ** 2) / var_q - 1.0))


def kl_table(char_samples, human_samples) -> np.ndarray:
    """``table[j, i] = KL(p_char_j || p_human_i)`` for lists of ``(N, 3)`` sample arrays."""
    hum = [diag_gaussian(s) for s in human_samples]
    out = np.empty((len(char_samples), len(hum)))
    for j, cs in enumerate(char_samples):
        mu_j, var_j = diag_gaussian(cs)
        for i, (mu_i, var_i) in enumerate(hum):
            out[j, i] = kl_diag(mu_j, var_j, mu_i, var_i)
    return out


def map_from_samples(char_samples, human_samples) -> EEMapping:
    table = kl_table(char_samples, human_samples)
    if table.shape[1] == 0:
        raise ValidationError("human side has no end-effectors", field="human_ds")
    # argmin returns the first minimum, so ties go to the lowest human index
    pairs = tuple(int(np.argmin(row)) for row in table)
    return EEMapping(pairs, "auto", tuple(tuple(r) for r in table))


def auto_map_end_effectors(human_ds, char_ds, override: EEMapping | None = None) -> EEMapping:
    """Pick, for each character end-effector, the human one with the closest position distribution."""
    if override is not None:
        return EEMapping(override.pairs, "manual", override.kl)
    if human_ds.skeleton.n_ee == 0 or char_ds.skeleton.n_ee == 0:
        raise ValidationError("both skeletons need at least one end-effector", field="end_effectors")
    hs, cs = human_ds.all_states(), char_ds.all_states()
    if len(hs) == 0 or len(cs) == 0:
        raise ValidationError("both datasets must contain states", field="dataset")
    hp = ee_positions(hs, human_ds.layout, human_ds.skeleton.body_length, human_ds.skeleton.n_ee)
    cp = ee_positions(cs, char_ds.layout, char_ds.skeleton.body_length, char_ds.skeleton.n_ee)
    return map_from_samples(list(cp), list(hp))


def parse_mapping(text: str | list, char_skeleton: Skeleton, human_skeleton: Skeleton) -> EEMapping:
    """Parse ``"char_ee=human_ee"`` pairs (indices or joint names), comma or list separated.

    Every character end-effector must be assigned exactly once.
    """
    items = text if isinstance(text, list) else [t for t in re.split(r"[,\s]+", text.strip()) if t]

    def resolve(tok, sk, side):
        names = [sk.joints[e.joint].name for e in sk.end_effectors]
        if tok.isdigit():
            k = int(tok)
            if k >= sk.n_ee:
                raise ValidationError(f"{side} end-effector {k} does not exist", field="mapping")
            return k
        if tok in names:
            return names.index(tok)
        raise ValidationError(f"unknown {side} end-effector {tok!r}; expected one of {names}", field="mapping")

    pairs: dict[int, int] = {}
    for item in items:
        if "=" not in item:
            raise ValidationError(f"expected char_ee=human_ee, got {item!r}", field="mapping")
        a, b = item.split("=", 1)
        j = resolve(a.strip(), char_skeleton, "character")
        if j in pairs:
            raise ValidationError(f"character end-effector {a!r} mapped twice", field="mapping")
        pairs[j] = resolve(b.strip(), human_skeleton, "human")
    missing = [j for j in range(char_skeleton.n_ee) if j not in pairs]
    if missing:
        raise ValidationError(f"character end-effectors {missing} are not mapped", field="mapping")
    return EEMapping(tuple(pairs[j] for j in range(char_skeleton.n_ee)), "manual")
