"""Cloth dynamics from multi-view video through mesh-anchored Gaussian splatting."""
from .geometry import ClothMesh, Trajectory, grid_mesh
from .splat import Camera, FrameSet, GaussianCloth, OpacityNet, render, render_batch

__all__ = ["ClothMesh", "Trajectory", "grid_mesh", "Camera", "FrameSet", "GaussianCloth",
           "OpacityNet", "render", "render_batch"]
__version__ = "0.1.0"
