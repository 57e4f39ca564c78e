"""Image, mask, and box primitives.

Images are float32 torch tensors of shape (H, W, 3) with values in [0, 1].
Masks are float32 tensors of shape (H, W) with values in {0, 1}, so the
Hadamard product with an image is exact and background pixels survive a
composite bit-identically.

All resizing is bilinear with half-pixel centers and edge clamping, i.e. the
convention of ``F.interpolate(..., mode="bilinear", align_corners=False)``.
Boxes use the inclusive-exclusive convention [x0, x1) x [y0, y1), so width is
simply x1 - x0.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import (
    EmptyRegionError,
    ImageDecodeError,
    InvalidInputError,
    WriteError,
)

# Type aliases used throughout the package.
ImageTensor = torch.Tensor  # (H, W, 3) float, values in [0, 1]
BinaryMask = torch.Tensor   # (H, W) float, values in {0, 1}


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, inclusive-exclusive: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidInputError(f"box origin must be non-negative: {self}")
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise InvalidInputError(f"degenerate box: {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class NormalizedBox:
    """Box in normalized [0, 1] image coordinates, corners (x0, y0, x1, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(0.0 <= v <= 1.0 for v in vals):
            raise InvalidInputError(f"normalized box outside [0, 1]: {self}")
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise InvalidInputError(f"degenerate normalized box: {self}")


def _check_image(img: ImageTensor, name: str = "image"):
    if not isinstance(img, torch.Tensor) or img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"{name} must be an (H, W, 3) tensor")


def _check_mask(mask: BinaryMask, name: str = "mask"):
    if not isinstance(mask, torch.Tensor) or mask.ndim != 2:
        raise InvalidInputError(f"{name} must be an (H, W) tensor")


def check_box_within(box: BoundingBox, height: int, width: int):
    """Raise unless ``box`` lies fully inside an image of the given extent."""
    if box.x1 > width or box.y1 > height:
        raise InvalidInputError(
            f"box {box} exceeds image extent {width}x{height}"
        )


def resize_bilinear(img: ImageTensor, height: int, width: int) -> ImageTensor:
    """Bilinear resize of an (H, W, 3) image; identity when sizes match."""
    _check_image(img)
    if img.shape[0] == height and img.shape[1] == width:
        return img
    x = img.permute(2, 0, 1).unsqueeze(0)
    x = F.interpolate(x, size=(height, width), mode="bilinear",
                      align_corners=False)
    return x.squeeze(0).permute(1, 2, 0).contiguous()


def load_image(path, target_resolution: int | None = None) -> ImageTensor:
    """Load an RGB raster and scale values to [0, 1].

    When ``target_resolution`` is given the image is stretched (aspect ratio
    is not preserved) to a square of that size.
    """
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path!r}: {exc}") from exc
    if arr.size == 0:
        raise InvalidInputError(f"zero-area image: {path!r}")
    img = torch.from_numpy(arr)
    if target_resolution is not None:
        img = resize_bilinear(img, target_resolution, target_resolution)
    return img


def save_image(img: ImageTensor, path):
    """Write an 8-bit RGB PNG; values are clamped to [0, 1] then quantized
    with round-half-up, so 0.5 maps to byte 128."""
    _check_image(img)
    if not torch.isfinite(img).all():
        raise InvalidInputError("image contains non-finite values")
    arr = (img.detach().clamp(0.0, 1.0) * 255.0 + 0.5).floor()
    arr = arr.to(torch.uint8).cpu().numpy()
    try:
        os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise WriteError(f"cannot write image {path!r}: {exc}") from exc


def load_mask(path, target_resolution: int | None = None) -> BinaryMask:
    """Load a single-channel mask PNG; bytes >= 128 are foreground.

    Resizing (when requested) is nearest-neighbor so the mask stays binary.
    """
    try:
        with Image.open(path) as im:
            gray = im.convert("L")
            if target_resolution is not None:
                gray = gray.resize((target_resolution, target_resolution),
                                   Image.NEAREST)
            arr = np.asarray(gray, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode mask {path!r}: {exc}") from exc
    return torch.from_numpy((arr >= 128).astype(np.float32))


def save_mask(mask: BinaryMask, path):
    """Write a mask as an 8-bit single-channel PNG (255 = foreground)."""
    _check_mask(mask)
    arr = ((mask.detach() > 0.5).to(torch.uint8) * 255).cpu().numpy()
    try:
        os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise WriteError(f"cannot write mask {path!r}: {exc}") from exc


def apply_mask(img: ImageTensor, mask: BinaryMask) -> ImageTensor:
    """Hadamard product: keep pixels where mask=1, zero them where mask=0."""
    _check_image(img)
    _check_mask(mask)
    if img.shape[:2] != mask.shape:
        raise InvalidInputError(
            f"image {tuple(img.shape[:2])} and mask {tuple(mask.shape)} differ"
        )
    return img * mask.unsqueeze(-1)


def composite(stylized: ImageTensor, content: ImageTensor,
              mask: BinaryMask) -> ImageTensor:
    """stylized * M + content * (1 - M).

    Background pixels (mask=0) are bit-identical to ``content``.
    """
    _check_image(stylized, "stylized")
    _check_image(content, "content")
    _check_mask(mask)
    if stylized.shape != content.shape or stylized.shape[:2] != mask.shape:
        raise InvalidInputError("composite inputs must share one shape")
    m = mask.unsqueeze(-1)
    return stylized * m + content * (1.0 - m)


def tight_bbox(mask: BinaryMask) -> BoundingBox:
    """Smallest box containing every foreground pixel of ``mask``."""
    _check_mask(mask)
    ys, xs = torch.nonzero(mask > 0.5, as_tuple=True)
    if ys.numel() == 0:
        raise EmptyRegionError("mask has no foreground pixels")
    return BoundingBox(int(xs.min()), int(ys.min()),
                       int(xs.max()) + 1, int(ys.max()) + 1)


def crop_resize(img: ImageTensor, box: BoundingBox,
                out_size: int) -> ImageTensor:
    """Extract the region under ``box`` and resize it to a square."""
    _check_image(img)
    check_box_within(box, img.shape[0], img.shape[1])
    crop = img[box.y0:box.y1, box.x0:box.x1, :]
    return resize_bilinear(crop, out_size, out_size)
