"""Sickle-cell screening from low-contrast microscope images.

Random-forest pixel segmentation, shape descriptors, RF/SVM sample
classification and two-concentration subject fusion.
"""

__version__ = "0.1.0"
