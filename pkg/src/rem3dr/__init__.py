"""Two-stage long-tailed multimodal regression: adaptive-margin contrastive
pretraining, then sharpness-aware gradient-modulated joint training."""

__version__ = "0.1.0"
