from .tensor import Tensor, parameter
from .layers import (AttentionBlock, Linear, Module, PyramidHead, Transformer, add_positional,
                     attention, fourier_embed, l2_normalize, pyramid_features, refine_features)
from .extractor import BackboneFeatures, FeatureProvider, FileProvider, ToyExtractor
from .model import MatchFeatures, MatchingNetwork

__all__ = [
    "Tensor", "parameter", "AttentionBlock", "Linear", "Module", "PyramidHead", "Transformer",
    "add_positional", "attention", "fourier_embed", "l2_normalize", "pyramid_features",
    "refine_features", "BackboneFeatures", "FeatureProvider", "FileProvider", "ToyExtractor",
    "MatchFeatures", "MatchingNetwork",
]
