"""Motion datasets: trajectories of one skeleton plus derived state transitions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ace.errors import ValidationError
from ace.kinematics.skeleton import Skeleton, Trajectory
from ace.kinematics.state import HUMAN_LAYOUT, character_layout, character_states, human_states

SPECIES = ("human", "character")


@dataclass(frozen=True)
class MotionDataset:
    """All trajectories share ``skeleton``. ``species`` selects the state layout."""

    skeleton: Skeleton
    trajectories: tuple[Trajectory, ...] = ()
    species: str = "character"

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if self.species not in SPECIES:
            raise ValidationError(f"unknown species {self.species!r}", field="species")
        for i, tr in enumerate(self.trajectories):
            if tr.skeleton != self.skeleton:
                raise ValidationError(
                    f"skeleton {tr.skeleton.name!r} differs from dataset skeleton {self.skeleton.name!r}",
                    field=f"trajectories[{i}].skeleton",
                )

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_frames(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def layout(self):
        return HUMAN_LAYOUT if self.species == "human" else character_layout(self.skeleton)

    @property
    def state_size(self) -> int:
        return self.layout.size

    @cached_property
    def states(self) -> list[np.ndarray]:
        """Per-trajectory state arrays (frames 1.. of each trajectory)."""
        fn = human_states if self.species == "human" else character_states
        out = [fn(t) for t in self.trajectories]
        for arr in out:
            arr.setflags(write=False)
        return out

    def all_states(self) -> np.ndarray:
        parts = [s for s in self.states if len(s)]
        if not parts:
            return np.zeros((0, self.state_size))
        return np.concatenate(parts)

    def transitions(self) -> tuple[np.ndarray, np.ndarray]:
        """Consecutive state pairs ``(x_{t-1}, x_t)`` within each trajectory."""
        prev = [s[:-1] for s in self.states if len(s) > 1]
        cur = [s[1:] for s in self.states if len(s) > 1]
        if not prev:
            empty = np.zeros((0, self.state_size))
            return empty, empty
        return np.concatenate(prev), np.concatenate(cur)

    def split(self, fraction: float = 0.5) -> tuple["MotionDataset", "MotionDataset"]:
        """Split by trajectory (first part gets ``ceil(fraction * n)``)."""
        k = int(np.ceil(fraction * len(self)))
        return (
            MotionDataset(self.skeleton, self.trajectories[:k], self.species),
            MotionDataset(self.skeleton, self.trajectories[k:], self.species),
        )
