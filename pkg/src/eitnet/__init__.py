"""Multi-camera basketball action recognition at desk scale.

Stages: detection (multi-scale fusion and box regression), inflated-3D
feature extraction, divided space-time attention encoding, plus metrics,
a toy trainer, synthetic data, and a simulated IoT acquisition layer.
"""

__version__ = "0.1.0"

ACTION_LABELS = ("dribble", "shoot", "pass", "jump")
