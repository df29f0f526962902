from ace.kinematics.characters import CharacterRig, LegChain, get_rig, human_skeleton
from ace.kinematics.skeleton import (
    EndEffector,
    Joint,
    LocalFrame,
    Pose,
    Skeleton,
    Trajectory,
    fk_arrays,
    forward_kinematics,
    headings,
    local_frame,
    trajectory_fk,
)
from ace.kinematics.state import (
    HUMAN_LAYOUT,
    StateLayout,
    character_layout,
    character_state_size,
    character_states,
    extract_character_state,
    extract_human_state,
    human_states,
    states_to_trajectory,
    validate_character_state,
)

__all__ = [
    "CharacterRig",
    "EndEffector",
    "HUMAN_LAYOUT",
    "Joint",
    "LegChain",
    "LocalFrame",
    "Pose",
    "Skeleton",
    "StateLayout",
    "Trajectory",
    "character_layout",
    "character_state_size",
    "character_states",
    "extract_character_state",
    "extract_human_state",
    "fk_arrays",
    "forward_kinematics",
    "get_rig",
    "headings",
    "human_skeleton",
    "human_states",
    "local_frame",
    "states_to_trajectory",
    "trajectory_fk",
    "validate_character_state",
]
