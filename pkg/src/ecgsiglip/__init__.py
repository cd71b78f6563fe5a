"""Sigmoid contrastive signal/text pretraining for multi-label 12-lead ECG."""
from .vocab import FINDINGS, N_FINDINGS, render_label_prompt, render_training_text

__version__ = "0.1.0"
__all__ = ["FINDINGS", "N_FINDINGS", "render_label_prompt", "render_training_text", "__version__"]
