"""Diabetic-retinopathy benchmark toolkit.

Lesion segmentation, DR grading with lesion fusion, and domain-adversarial
transfer to multi-disease identification, plus the evaluation metrics and a
deterministic phantom fundus generator used in place of clinical data.
"""

__version__ = "0.1.0"
