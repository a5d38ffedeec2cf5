"""Pyramid Patch Transformer auto-encoder for low-level features and two-image fusion."""

from .fusion import FusionStrategy, fuse_features, fuse_pair, fuse_rgb, tile_and_fuse
from .model import ModelConfig, PptModel, TrainConfig, load_model, reconstruct_loss, save_model, train
from .pyramid import FeatureStack, PyramidConfig, pyramid_encode
from .tensor import GradTape, Tensor

__version__ = "0.1.0"
