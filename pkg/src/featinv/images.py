"""Image buffers and the preprocessing contract.

Images live in "preprocessed space": RGB scaled to [0, 1] with the ImageNet
channel means subtracted (no variance scaling). All backbones in this package
consume and produce pixels in that space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import UsageError

# ImageNet training means on the [0, 1] scale, matching the provenance of the
# published VGG-19 weights this package fetches.
IMAGENET_MEAN = (0.485, 0.456, 0.406)

# Five stride-2 pooling stages need at least 32 px on each side to leave a
# 1x1 spatial extent at the deepest layer. Enforced when decoding files.
MIN_DECODE_SIZE = 32

COLORSPACE = "rgb-meansub"


@dataclass
class ImageBuffer:
    """A 3xHxW real-valued image in preprocessed space."""

    pixels: torch.Tensor
    mean: tuple[float, float, float] = IMAGENET_MEAN
    colorspace: str = COLORSPACE
    source: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"pixels must be 3xHxW, got {tuple(self.pixels.shape)}")
        if self.height < 1 or self.width < 1:
            raise ValueError("image must have positive extent")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[2])

    def clone(self) -> "ImageBuffer":
        return ImageBuffer(self.pixels.detach().clone(), self.mean, self.colorspace, self.source)


def preprocess_rgb(rgb: np.ndarray, dtype: torch.dtype = torch.float32,
                   mean: tuple[float, float, float] = IMAGENET_MEAN) -> torch.Tensor:
    """uint8 HxWx3 array -> 3xHxW tensor in preprocessed space."""
    t = (torch.from_numpy(np.ascontiguousarray(rgb).copy()).to(dtype)
         .permute(2, 0, 1).contiguous() / 255.0)
    return t - torch.tensor(mean, dtype=dtype).view(3, 1, 1)


def deprocess(buf: ImageBuffer) -> np.ndarray:
    """Invert preprocessing back to a uint8 HxWx3 array (values clipped)."""
    px = buf.pixels.detach().to(torch.float64)
    px = px + torch.tensor(buf.mean, dtype=torch.float64).view(3, 1, 1)
    arr = (px * 255.0).round().clamp(0, 255).permute(1, 2, 0).numpy()
    return arr.astype(np.uint8)


def pixel_range(mean: tuple[float, float, float] = IMAGENET_MEAN) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel (low, high) bounds of valid preprocessed pixel values."""
    m = torch.tensor(mean, dtype=torch.float64).view(3, 1, 1)
    return -m, 1.0 - m


def load_image(path: str | Path, size: int | tuple[int, int] | None = None,
               dtype: torch.dtype = torch.float32) -> ImageBuffer:
    """Decode a PNG/JPEG file and preprocess it.

    size: optional target as a single int (square) or (height, width).
    Raises UsageError for unreadable files or images below the minimum size.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            if size is not None:
                h, w = (size, size) if isinstance(size, int) else size
                if h < 1 or w < 1:
                    raise UsageError(f"degenerate resize {h}x{w} for {path}")
                rgb = rgb.resize((w, h), Image.BICUBIC)
            arr = np.asarray(rgb, dtype=np.uint8)
    except (FileNotFoundError, Image.UnidentifiedImageError, OSError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc
    if arr.shape[0] < MIN_DECODE_SIZE or arr.shape[1] < MIN_DECODE_SIZE:
        raise UsageError(
            f"image {path} is {arr.shape[0]}x{arr.shape[1]}; "
            f"needs at least {MIN_DECODE_SIZE}px on each side")
    return ImageBuffer(preprocess_rgb(arr, dtype), source=str(path))


def save_image(buf: ImageBuffer, path: str | Path) -> None:
    """Encode an ImageBuffer to an 8-bit RGB PNG."""
    Image.fromarray(deprocess(buf)).save(str(path), format="PNG")


def to_pil(buf: ImageBuffer) -> Image.Image:
    return Image.fromarray(deprocess(buf))


def area_matched_size(src_hw: tuple[int, int], target_hw: tuple[int, int]) -> tuple[int, int]:
    """Rescale src dimensions so its area matches target's, keeping aspect.

    Raises UsageError if the result would be degenerate.
    """
    sh, sw = src_hw
    th, tw = target_hw
    scale = ((th * tw) / (sh * sw)) ** 0.5
    out = (max(1, round(sh * scale)), max(1, round(sw * scale)))
    if out[0] < MIN_DECODE_SIZE or out[1] < MIN_DECODE_SIZE:
        raise UsageError(f"area-matched resize of {sh}x{sw} gives {out[0]}x{out[1]}, too small")
    return out
