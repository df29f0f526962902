"""Adversarial correspondence embedding: generator, discriminator, features and training."""

from ace.retarget.features import (
    EEMapping,
    FeatureSpec,
    auto_map_end_effectors,
    character_features,
    feature_fn,
    human_features,
    kl_diag,
    kl_table,
    map_from_samples,
    parse_mapping,
)
from ace.retarget.networks import (
    DiscriminatorModel,
    GeneratorModel,
    discriminate,
    discriminator_loss,
    generate,
    generator_forward,
    generator_loss,
)
from ace.retarget.training import AceResult, TrainConfig, TrainingDiverged, retarget, standing_state, train_ace

__all__ = [
    "AceResult",
    "DiscriminatorModel",
    "EEMapping",
    "FeatureSpec",
    "GeneratorModel",
    "TrainConfig",
    "TrainingDiverged",
    "auto_map_end_effectors",
    "character_features",
    "discriminate",
    "discriminator_loss",
    "feature_fn",
    "generate",
    "generator_forward",
    "generator_loss",
    "human_features",
    "kl_diag",
    "kl_table",
    "map_from_samples",
    "parse_mapping",
    "retarget",
    "standing_state",
    "train_ace",
]
