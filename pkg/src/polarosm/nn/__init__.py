"""Differentiable building blocks shared by both branches."""

from .checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .layers import C_OEM, C_PEM, EncoderConfig, OsmEmbedding, PointMLP, PolarConv, PolarEncoder, fan_in_uniform_

__all__ = [
    "C_OEM", "C_PEM", "CheckpointError", "EncoderConfig", "OsmEmbedding", "PointMLP", "PolarConv",
    "PolarEncoder", "decode_checkpoint", "encode_checkpoint", "fan_in_uniform_", "finite_difference_check",
    "load_checkpoint", "save_checkpoint",
]
