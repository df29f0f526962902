"""Cross-morphology motion retargeting through an adversarially trained latent correspondence."""

__version__ = "0.1.0"
