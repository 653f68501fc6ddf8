"""Gaze-to-object attribution and evaluation for egocentric eye-tracking recordings."""
from .attribution import attribute, batch_attribute, chi_square_critical, chi_square_distance
from .scene import CameraModel, ClassTaxonomy, FrameSegmentation, InstanceMask, RleMask, SegmentationCorpus

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "ClassTaxonomy",
    "FrameSegmentation",
    "InstanceMask",
    "RleMask",
    "SegmentationCorpus",
    "attribute",
    "batch_attribute",
    "chi_square_critical",
    "chi_square_distance",
]
