"""Multi-view Gaussian reconstruction with selective state-space sequence models."""

from ._core import (
    CameraView,
    GaussianMode,
    GaussianSet,
    ModelConfig,
    Reconstructor,
    TrainConfig,
    attention_flops,
    extract_mesh,
    generate_scene,
    orbit_camera,
    psnr,
    read_cameras,
    read_ply,
    render,
    ssim,
    ssm_flops,
    train,
    write_ply,
)

__all__ = [
    "CameraView",
    "GaussianMode",
    "GaussianSet",
    "ModelConfig",
    "Reconstructor",
    "TrainConfig",
    "attention_flops",
    "extract_mesh",
    "generate_scene",
    "orbit_camera",
    "psnr",
    "read_cameras",
    "read_ply",
    "render",
    "ssim",
    "ssm_flops",
    "train",
    "write_ply",
]
