"""foundreg: deformable 3D registration from frozen slice-wise 2D features.

Pipeline: a frozen 2D encoder is applied slice-wise, channels are
regularized (random subsets while training, PCA at inference), features
are reassembled to 3D and compressed by a small trainable block, and a
five-level coarse-to-fine pyramid head predicts residual deformation
fields that compose into the final transform.
"""
__version__ = "0.1.0"

from .types import (
    DeformationField,
    FeatureVolume,
    PcaModel,
    Segmentation,
    Volume,
)

__all__ = [
    "DeformationField",
    "FeatureVolume",
    "PcaModel",
    "Segmentation",
    "Volume",
    "__version__",
]
