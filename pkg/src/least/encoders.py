"""Encoder bundles: joint text/image embeddings plus perceptual features.

A bundle carries three differentiable callables and the input sizes they
expect. ``embed_image`` and ``extract_features`` accept (H, W, 3) images in
[0, 1] (or a leading batch dimension for ``embed_image``) and handle their own
resizing and pixel normalization, so the optimization variable stays in [0, 1]
space.

Two constructions ship:

* :func:`toy_bundle` - deterministic, dependency-free encoders built from
  seeded random projections over pooled color statistics. No checkpoints, no
  network; used by the offline test suite, the desk experiments, and
  ``--encoders toy`` on the CLI.
* :func:`clip_vgg_bundle` - the production pair: a CLIP checkpoint for the
  joint space and VGG19 features (conv4_2, conv5_2) for content. Requires
  downloadable weights (``transformers`` and ``torchvision`` model hubs).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Mapping

import torch
import torch.nn.functional as F

from .errors import ConfigError, InvalidInputError

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class EncoderBundle:
    embed_text: Callable[[str], torch.Tensor]
    embed_image: Callable[[torch.Tensor], torch.Tensor]
    extract_features: Callable[[torch.Tensor], Mapping[str, torch.Tensor]]
    image_input_size: int
    feature_input_size: int
    feature_layers: tuple[str, ...] = ("conv4_2", "conv5_2")


def _as_nchw(img: torch.Tensor) -> tuple[torch.Tensor, bool]:
    """(H, W, 3) or (N, H, W, 3) -> (N, 3, H, W) plus a had-batch flag."""
    if img.ndim == 3:
        return img.permute(2, 0, 1).unsqueeze(0), False
    if img.ndim == 4:
        return img.permute(0, 3, 1, 2), True
    raise InvalidInputError(f"expected (H, W, 3) or (N, H, W, 3), got "
                            f"{tuple(img.shape)}")


def _resize_nchw(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-2] == size and x.shape[-1] == size:
        return x
    return F.interpolate(x, size=(size, size), mode="bilinear",
                         align_corners=False)


def _seed_from_text(text: str) -> int:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63 - 1)


def toy_bundle(dim: int = 64, image_input_size: int = 64,
               feature_input_size: int = 64, seed: int = 1234,
               dtype: torch.dtype = torch.float32) -> EncoderBundle:
    """Deterministic stand-in encoders.

    Text maps to a unit Gaussian vector seeded by a hash of the string. Images
    are resized, average-pooled to a 4x4 color grid, and projected by a fixed
    Gaussian matrix, so styles behave like directions in coarse color-statistic
    space and crops of a region move together. Features are blurred crops at
    two scales under the usual layer names.
    """
    gen = torch.Generator().manual_seed(seed)
    proj = torch.randn(dim, 48, generator=gen, dtype=torch.float32)
    proj = proj / (48 ** 0.5)

    def embed_text(text: str) -> torch.Tensor:
        g = torch.Generator().manual_seed(_seed_from_text(text))
        v = torch.randn(dim, generator=g, dtype=torch.float32)
        return (v / v.norm()).to(dtype)

    def embed_image(img: torch.Tensor) -> torch.Tensor:
        x, batched = _as_nchw(img)
        x = _resize_nchw(x, image_input_size)
        pooled = F.adaptive_avg_pool2d(x, 4).reshape(x.shape[0], -1)
        out = pooled @ proj.to(pooled.dtype).T
        return out if batched else out.squeeze(0)

    def extract_features(img: torch.Tensor) -> dict[str, torch.Tensor]:
        x, _ = _as_nchw(img)
        x = _resize_nchw(x, feature_input_size)
        return {"conv4_2": F.avg_pool2d(x, 4), "conv5_2": F.avg_pool2d(x, 8)}

    return EncoderBundle(
        embed_text=embed_text,
        embed_image=embed_image,
        extract_features=extract_features,
        image_input_size=image_input_size,
        feature_input_size=feature_input_size,
    )


def clip_vgg_bundle(device: str = "cpu",
                    clip_name: str = "openai/clip-vit-base-patch32",
                    image_input_size: int = 224,
                    feature_input_size: int = 224) -> EncoderBundle:
    """Production encoders: CLIP joint space + VGG19 perceptual features.

    Loads pretrained weights through ``transformers`` and ``torchvision``;
    both are frozen, and the image paths stay differentiable with respect to
    the pixels.
    """
    from torchvision.models import VGG19_Weights, vgg19
    from transformers import CLIPModel, CLIPTokenizerFast

    clip = CLIPModel.from_pretrained(clip_name).to(device).eval()
    tokenizer = CLIPTokenizerFast.from_pretrained(clip_name)
    clip.requires_grad_(False)

    vgg = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).features.to(device).eval()
    vgg.requires_grad_(False)
    # torchvision's VGG19 feature indices for the two content layers.
    vgg_taps = {21: "conv4_2", 30: "conv5_2"}
    vgg_prefix = torch.nn.Sequential(*list(vgg.children())[:31])

    clip_mean = torch.tensor(CLIP_MEAN, device=device).view(1, 3, 1, 1)
    clip_std = torch.tensor(CLIP_STD, device=device).view(1, 3, 1, 1)
    vgg_mean = torch.tensor(IMAGENET_MEAN, device=device).view(1, 3, 1, 1)
    vgg_std = torch.tensor(IMAGENET_STD, device=device).view(1, 3, 1, 1)

    def embed_text(text: str) -> torch.Tensor:
        tokens = tokenizer([text], padding=True, truncation=True,
                           return_tensors="pt").to(device)
        with torch.no_grad():
            feats = clip.get_text_features(**tokens)
        return feats.squeeze(0)

    def embed_image(img: torch.Tensor) -> torch.Tensor:
        x, batched = _as_nchw(img)
        x = _resize_nchw(x.to(device), image_input_size)
        x = (x - clip_mean) / clip_std
        feats = clip.get_image_features(pixel_values=x)
        return feats if batched else feats.squeeze(0)

    def extract_features(img: torch.Tensor) -> dict[str, torch.Tensor]:
        x, _ = _as_nchw(img)
        x = _resize_nchw(x.to(device), feature_input_size)
        x = (x - vgg_mean) / vgg_std
        out = {}
        for idx, layer in enumerate(vgg_prefix):
            x = layer(x)
            if idx in vgg_taps:
                out[vgg_taps[idx]] = x
        return out

    return EncoderBundle(
        embed_text=embed_text,
        embed_image=embed_image,
        extract_features=extract_features,
        image_input_size=image_input_size,
        feature_input_size=feature_input_size,
    )


def make_bundle(kind: str, device: str = "cpu") -> EncoderBundle:
    """Build a bundle by name: "clip-vgg" or "toy"."""
    if kind == "toy":
        return toy_bundle()
    if kind == "clip-vgg":
        return clip_vgg_bundle(device=device)
    raise ConfigError(f"unknown encoder bundle {kind!r}")
