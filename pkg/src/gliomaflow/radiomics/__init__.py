"""Shape, first-order and texture features per tumour class and image."""

from .discretize import DEFAULT_BIN_WIDTH, DiscretizedROI, bin_levels, discretize
from .extract import (IMAGE_ORDER, FeatureVector, extract_all, feature_names,
                      write_features_csv, write_features_json)
from .firstorder import FIRST_ORDER_FEATURES, first_order_features
from .matrices import FAMILIES, HORIZONTAL, OFFSETS_13, OFFSETS_26, texture_matrix
from .shape import SHAPE_FEATURES, shape_features
from .texture import TEXTURE_FEATURES, texture_features

__all__ = [
    "DEFAULT_BIN_WIDTH", "DiscretizedROI", "bin_levels", "discretize", "IMAGE_ORDER",
    "FeatureVector", "extract_all", "feature_names", "write_features_csv",
    "write_features_json", "FIRST_ORDER_FEATURES", "first_order_features", "FAMILIES",
    "HORIZONTAL", "OFFSETS_13", "OFFSETS_26", "texture_matrix", "SHAPE_FEATURES",
    "shape_features", "TEXTURE_FEATURES", "texture_features",
]
