from .conv import (
    BatchNorm,
    ConvParams,
    RepBranches,
    ShapeError,
    bilinear_sample,
    conv2d,
    deform_conv2d,
    long_short_fuse,
    rep_fuse,
)
from .distill import (
    AKDMLoss,
    Assignment,
    LevelLogits,
    LogitsBundle,
    akdm_grad,
    akdm_grad_check,
    akdm_loss,
    decode_level,
    decode_reg,
    ota_assign,
    weighted_total,
)
from .pyramid import PyramidSpec, drfpn_shapes, drfpn_spec, pafpn_spec

__all__ = [
    "AKDMLoss",
    "Assignment",
    "BatchNorm",
    "ConvParams",
    "LevelLogits",
    "LogitsBundle",
    "PyramidSpec",
    "RepBranches",
    "ShapeError",
    "akdm_grad",
    "akdm_grad_check",
    "akdm_loss",
    "bilinear_sample",
    "conv2d",
    "decode_level",
    "decode_reg",
    "deform_conv2d",
    "drfpn_shapes",
    "drfpn_spec",
    "long_short_fuse",
    "ota_assign",
    "pafpn_spec",
    "rep_fuse",
    "weighted_total",
]
