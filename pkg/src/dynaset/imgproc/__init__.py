from dynaset.imgproc.noise import (
    NoiseKind,
    NoiseSpec,
    apply_noise,
    default_blur_sigma,
    gaussian_kernel,
)
from dynaset.imgproc.raster import (
    IMAGE_SUFFIXES,
    RasterImage,
    center_crop,
    read_image,
    resize,
    square_resize,
    write_png,
)

__all__ = [
    "IMAGE_SUFFIXES",
    "NoiseKind",
    "NoiseSpec",
    "RasterImage",
    "apply_noise",
    "center_crop",
    "default_blur_sigma",
    "gaussian_kernel",
    "read_image",
    "resize",
    "square_resize",
    "write_png",
]
