"""The four masked objectives and their weighted total.

All losses are differentiable with respect to the stylized image and are
computed over an :class:`~least.encoders.EncoderBundle`:

* directional loss: 1 - cos(dT, dI) where dT is the text-embedding
  displacement (style minus source text) and dI the image-embedding
  displacement of the mask-Hadamarded pair;
* patch loss: the directional loss summed over random square patches drawn
  from the region's tight bounding box;
* content loss: MSE between perceptual feature maps of the box crops,
  averaged over layers;
* total-variation loss: mean squared forward differences of the masked
  stylized image.

Perturbing pixels where the mask is 0 cannot change the directional or TV
losses; perturbing pixels outside the box cannot change the patch or content
losses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torchvision.transforms.functional as tvf

from .encoders import EncoderBundle
from .errors import DegenerateStyleError, InvalidInputError
from .grounding import RegionStyleTask
from .imaging import (
    BinaryMask,
    BoundingBox,
    ImageTensor,
    apply_mask,
    crop_resize,
)

NORM_EPS = 1e-8

DEFAULT_SOURCE_TEXT = "a Photo"


@dataclass(frozen=True)
class LossWeights:
    lambda_dir: float = 500.0
    lambda_patch: float = 1000.0
    lambda_content: float = 150.0
    lambda_tv: float = 2e-3

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise InvalidInputError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TextDelta:
    """Precomputed text-embedding displacement for one region task."""

    vector: torch.Tensor


@dataclass(frozen=True)
class PatchBox:
    """Square pixel patch with origin (x, y); may be smaller than the nominal
    patch size when the governing box is."""

    x: int
    y: int
    size: int


def _floored_norm(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    # sqrt of a clamped sum of squares: equals the norm above NORM_EPS and
    # keeps gradients finite at the zero vector.
    return torch.sqrt(torch.clamp((v * v).sum(dim), min=NORM_EPS ** 2))


def directional_term(dt: torch.Tensor, di: torch.Tensor) -> torch.Tensor:
    """1 - cos(dt, di) with norms floored at NORM_EPS.

    ``di`` may be a single vector or a batch (N, D); a (near-)zero ``di``
    yields a loss of 1 while keeping the gradient path through the dot
    product alive.
    """
    dot = (di * dt).sum(-1)
    return 1.0 - dot / (_floored_norm(dt) * _floored_norm(di))


def text_delta(style: str, source_text: str, enc: EncoderBundle) -> TextDelta:
    """Embed both phrases and subtract; degenerate (zero) deltas are refused."""
    if not style.strip() or not source_text.strip():
        raise InvalidInputError("style and source text must be non-empty")
    delta = enc.embed_text(style) - enc.embed_text(source_text)
    if float(delta.norm()) < NORM_EPS:
        raise DegenerateStyleError(
            f"style {style!r} embeds onto the source text {source_text!r}"
        )
    return TextDelta(vector=delta)


def masked_directional_loss(content: ImageTensor, stylized: ImageTensor,
                            mask: BinaryMask, dt: TextDelta,
                            enc: EncoderBundle) -> torch.Tensor:
    if content.shape != stylized.shape:
        raise InvalidInputError("content and stylized shapes differ")
    di = enc.embed_image(apply_mask(stylized, mask)) \
        - enc.embed_image(apply_mask(content, mask))
    return directional_term(dt.vector, di)


def sample_patches(box: BoundingBox, count: int, patch_size: int,
                   generator: torch.Generator) -> list[PatchBox]:
    """Draw ``count`` square patches uniformly from within ``box``.

    The side is clamped to min(patch_size, box width, box height) so patches
    always fit. Deterministic given the generator state.
    """
    if count < 1:
        raise InvalidInputError("patch count must be >= 1")
    size = min(patch_size, box.width, box.height)
    if size < 1:
        raise InvalidInputError("patch size must be >= 1")
    if size == 1 and (box.width == 1 or box.height == 1):
        warnings.warn("degenerate 1-pixel patches: box is a single row/column",
                      stacklevel=2)
    xs = torch.randint(box.x0, box.x1 - size + 1, (count,), generator=generator)
    ys = torch.randint(box.y0, box.y1 - size + 1, (count,), generator=generator)
    return [PatchBox(int(x), int(y), size) for x, y in zip(xs, ys)]


def _perspective_params(size: int, generator: torch.Generator,
                        distortion: float = 0.5):
    half = int(distortion * size) // 2

    def jitter(lo_x, lo_y):
        dx = int(torch.randint(0, half + 1, (1,), generator=generator))
        dy = int(torch.randint(0, half + 1, (1,), generator=generator))
        return [lo_x + dx if lo_x == 0 else lo_x - dx,
                lo_y + dy if lo_y == 0 else lo_y - dy]

    start = [[0, 0], [size - 1, 0], [size - 1, size - 1], [0, size - 1]]
    end = [jitter(*corner) for corner in start]
    return start, end


def masked_patch_loss(content: ImageTensor, stylized: ImageTensor,
                      patches: list[PatchBox], dt: TextDelta,
                      enc: EncoderBundle, augment: bool = False,
                      generator: torch.Generator | None = None
                      ) -> torch.Tensor:
    """Directional loss on each patch pair, summed over patches.

    Crops are taken at the patch coordinates from both images, resized to the
    image encoder's input resolution, and (optionally) warped by a random
    perspective, the same warp for both members of a pair.
    """
    if content.shape != stylized.shape:
        raise InvalidInputError("content and stylized shapes differ")
    if not patches:
        raise InvalidInputError("no patches given")
    crops_c = torch.stack(
        [content[p.y:p.y + p.size, p.x:p.x + p.size, :] for p in patches])
    crops_s = torch.stack(
        [stylized[p.y:p.y + p.size, p.x:p.x + p.size, :] for p in patches])
    size = enc.image_input_size
    pair = torch.cat([crops_c, crops_s]).permute(0, 3, 1, 2)
    if pair.shape[-1] != size or pair.shape[-2] != size:
        pair = torch.nn.functional.interpolate(
            pair, size=(size, size), mode="bilinear", align_corners=False)
    if augment:
        if generator is None:
            generator = torch.Generator()
        n = len(patches)
        warped = []
        for j in range(n):
            start, end = _perspective_params(size, generator)
            duo = torch.stack([pair[j], pair[n + j]])
            warped.append(tvf.perspective(
                duo, start, end,
                interpolation=tvf.InterpolationMode.BILINEAR))
        pair = torch.cat([torch.stack([w[0] for w in warped]),
                          torch.stack([w[1] for w in warped])])
    embeddings = enc.embed_image(pair.permute(0, 2, 3, 1))
    n = len(patches)
    di = embeddings[n:] - embeddings[:n]
    return directional_term(dt.vector, di).sum()


def masked_content_loss(content: ImageTensor, stylized: ImageTensor,
                        box: BoundingBox, enc: EncoderBundle) -> torch.Tensor:
    """MSE between perceptual features of the box crops, averaged over the
    bundle's feature layers."""
    if content.shape != stylized.shape:
        raise InvalidInputError("content and stylized shapes differ")
    size = enc.feature_input_size
    feats_c = enc.extract_features(crop_resize(content, box, size))
    feats_s = enc.extract_features(crop_resize(stylized, box, size))
    terms = [((feats_s[layer] - feats_c[layer]) ** 2).mean()
             for layer in enc.feature_layers]
    return torch.stack(terms).mean()


def masked_tv_loss(stylized: ImageTensor, mask: BinaryMask) -> torch.Tensor:
    """Mean squared forward differences (horizontal + vertical) of the
    mask-Hadamarded image."""
    j = apply_mask(stylized, mask)
    dh = j[:, 1:, :] - j[:, :-1, :]
    dv = j[1:, :, :] - j[:-1, :, :]
    loss = torch.zeros((), dtype=stylized.dtype, device=stylized.device)
    if dh.numel():
        loss = loss + (dh * dh).mean()
    if dv.numel():
        loss = loss + (dv * dv).mean()
    return loss


def total_objective(content: ImageTensor, stylized: ImageTensor,
                    task: RegionStyleTask, dt: TextDelta,
                    patches: list[PatchBox], weights: LossWeights,
                    enc: EncoderBundle, augment: bool = False,
                    generator: torch.Generator | None = None
                    ) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the four losses plus an unweighted per-term breakdown."""
    l_dir = masked_directional_loss(content, stylized, task.mask, dt, enc)
    l_patch = masked_patch_loss(content, stylized, patches, dt, enc,
                                augment=augment, generator=generator)
    l_content = masked_content_loss(content, stylized, task.box, enc)
    l_tv = masked_tv_loss(stylized, task.mask)
    total = (weights.lambda_dir * l_dir
             + weights.lambda_patch * l_patch
             + weights.lambda_content * l_content
             + weights.lambda_tv * l_tv)
    breakdown = {
        "dir": float(l_dir.detach()),
        "patch": float(l_patch.detach()),
        "content": float(l_content.detach()),
        "tv": float(l_tv.detach()),
    }
    return total, breakdown
