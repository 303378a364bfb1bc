"""One-shot UV texture completion from a single posed face image."""
from .errors import TexCompleteError, ValidationError
from .geometry import Camera, Mesh, project, vertex_normals
from .genmodel import PluginSet, make_toy_plugins
from .losses import LossWeights, psnr, ssim, total_loss
from .optim import AdamState, OptimOptions, adam_step
from .optim import project as project_latent
from .pipeline import CompletionOptions, ViewPlan, blend, default_view_plan, frontalize, run_completion
from .raster import RasterImage, rasterize, render_view, unwrap_to_uv
from .visibility import dominance_index, uv_optimization_mask, visibility_map

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Camera", "CompletionOptions", "LossWeights", "Mesh", "OptimOptions", "PluginSet",
    "RasterImage", "TexCompleteError", "ValidationError", "ViewPlan", "adam_step", "blend",
    "default_view_plan", "dominance_index", "frontalize", "make_toy_plugins", "project",
    "project_latent", "psnr", "rasterize", "render_view", "run_completion", "ssim", "total_loss",
    "unwrap_to_uv", "uv_optimization_mask", "vertex_normals", "visibility_map",
]
