"""splatwear: a layered Gaussian avatar engine with a digital wardrobe,
penetration-aware try-on rendering, and an interactive HTTP service."""

__version__ = "0.1.0"

from .core import (
    CameraKind,
    CameraModel,
    GaussianLayer,
    GaussianPrimitive,
    LayerId,
    LossWeights,
    PoseParams,
    ShapeParams,
    covariance_from_rotation_scale,
    validate_layer,
)
from .render import PosedGaussianSet, RenderOutput, rasterize, reference_composite
from .wardrobe import (
    AvatarIdentity,
    Catalog,
    ComposedAvatar,
    WardrobeAsset,
    load_asset,
    save_asset,
    validate_asset,
)

__all__ = [
    "CameraKind",
    "CameraModel",
    "GaussianLayer",
    "GaussianPrimitive",
    "LayerId",
    "LossWeights",
    "PoseParams",
    "ShapeParams",
    "covariance_from_rotation_scale",
    "validate_layer",
    "PosedGaussianSet",
    "RenderOutput",
    "rasterize",
    "reference_composite",
    "AvatarIdentity",
    "Catalog",
    "ComposedAvatar",
    "WardrobeAsset",
    "load_asset",
    "save_asset",
    "validate_asset",
    "__version__",
]
