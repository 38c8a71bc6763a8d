from .imageio import read_igsi, read_png, write_igsi, write_png
from .projection import COV_FLOOR, CULL_SIGMA, Splat2D, as_params, build_covariance, project_gaussian
from .raster import (
    T_MIN,
    TILE,
    ForwardState,
    ForwardStateError,
    RenderGradients,
    RenderOutput,
    rasterize,
    rasterize_backward,
    render_color,
    render_features,
    render_params,
)
from .reference import rasterize_reference
from ..sh import evaluate_sh

__all__ = [
    "COV_FLOOR", "CULL_SIGMA", "T_MIN", "TILE",
    "ForwardState", "ForwardStateError", "RenderGradients", "RenderOutput", "Splat2D",
    "as_params", "build_covariance", "evaluate_sh", "project_gaussian",
    "rasterize", "rasterize_backward", "rasterize_reference", "render_color", "render_features", "render_params",
    "read_igsi", "read_png", "write_igsi", "write_png",
]
