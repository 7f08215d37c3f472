"""Two-stream cloth-changing person re-identification at desk scale.

A global stream with a mask-supervised attention map suppresses clothing
regions, and a face stream trained on degraded crops inherits knowledge from
a teacher trained on restored crops. Synthetic data with ground-truth parsing
masks and faces stands in for real datasets and pretrained helper networks.
"""

__version__ = "0.1.0"
