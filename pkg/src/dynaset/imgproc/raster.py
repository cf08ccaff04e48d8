"""RGB8 raster type, geometric preprocessing, and PNG/JPEG I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Row-major RGB image, 8 bits per channel.

    ``pixels`` is an (height, width, 3) uint8 array. The array is made
    read-only on construction so instances can be shared freely.
    """

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.size != self.width * self.height * 3:
            raise ValueError(
                f"pixel buffer has {px.size} values, expected {self.width * self.height * 3}"
            )
        px = px.reshape(self.height, self.width, 3)
        if px is self.pixels or np.shares_memory(px, self.pixels):
            px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RasterImage":
        """Wrap an (H, W, 3) or (H, W) uint8 array (grayscale is replicated)."""
        a = np.asarray(array)
        if a.ndim == 2:
            a = np.repeat(a[:, :, None], 3, axis=2)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {a.shape}")
        if a.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {a.dtype}")
        return cls(width=a.shape[1], height=a.shape[0], pixels=a)

    @classmethod
    def from_unit_float(cls, array: np.ndarray) -> "RasterImage":
        """Clip a [0, 1] float array and requantize to 8 bits."""
        q = np.rint(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
        return cls.from_array(q)

    @classmethod
    def filled(cls, width: int, height: int, rgb) -> "RasterImage":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = np.asarray(rgb, dtype=np.uint8)
        return cls(width=width, height=height, pixels=px)

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def to_unit_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.size == other.size and np.array_equal(self.pixels, other.pixels)

    def __hash__(self) -> int:
        return hash((self.width, self.height, self.pixels.tobytes()))

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height})"


def center_crop(img: RasterImage, side: int) -> RasterImage:
    """Centered ``side`` x ``side`` window, offsets floored."""
    if side < 1 or side > min(img.width, img.height):
        raise ValueError(
            f"crop side {side} does not fit a {img.width}x{img.height} image"
        )
    top = (img.height - side) // 2
    left = (img.width - side) // 2
    return RasterImage.from_array(img.pixels[top : top + side, left : left + side])


def _bilinear_axis(src_len: int, dst_len: int):
    # Pixel-center alignment: dst pixel centers map onto src pixel centers.
    scale = src_len / dst_len
    pos = (np.arange(dst_len, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, src_len - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, src_len - 1)
    t = pos - i0
    return i0, i1, t


def resize(img: RasterImage, width: int, height: int) -> RasterImage:
    """Bilinear resize with pixel-center alignment, no antialiasing."""
    if width < 1 or height < 1:
        raise ValueError(f"target size must be positive, got {width}x{height}")
    if (width, height) == img.size:
        return img
    src = img.pixels
    x0, x1, tx = _bilinear_axis(img.width, width)
    y0, y1, ty = _bilinear_axis(img.height, height)
    # Vertical pass on just the source rows that are sampled, then horizontal.
    ty = ty[:, None, None]
    rows = src[y0].astype(np.float64) * (1.0 - ty) + src[y1].astype(np.float64) * ty
    tx = tx[None, :, None]
    out = rows[:, x0] * (1.0 - tx) + rows[:, x1] * tx
    return RasterImage.from_array(np.rint(np.clip(out, 0, 255)).astype(np.uint8))


def square_resize(img: RasterImage, side: int) -> RasterImage:
    """Center-crop to the largest square, then resize to ``side``."""
    short = min(img.width, img.height)
    if img.width != img.height:
        img = center_crop(img, short)
    return resize(img, side, side)


def read_image(path) -> RasterImage:
    with Image.open(path) as im:
        im = im.convert("RGB")
        return RasterImage.from_array(np.asarray(im, dtype=np.uint8))


def write_png(img: RasterImage, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(img.pixels)).save(path, format="PNG", compress_level=1)


IMAGE_SUFFIXES = frozenset({".png", ".jpg", ".jpeg"})
