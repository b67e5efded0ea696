"""acidlab: a desk-scale laboratory for ACID-stabilized tomographic reconstruction."""

from acidlab.grid import (
    Image,
    Measurement,
    MetricsReport,
    ShapeError,
    ValidationError,
    l2_norm,
    psnr,
    read_f64grid,
    ssim,
    write_f64grid,
    write_pgm,
)

__all__ = [
    "Image",
    "Measurement",
    "MetricsReport",
    "ShapeError",
    "ValidationError",
    "l2_norm",
    "psnr",
    "read_f64grid",
    "ssim",
    "write_f64grid",
    "write_pgm",
]

__version__ = "0.1.0"
