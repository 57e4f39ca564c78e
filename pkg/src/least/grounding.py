"""Grounding: turn a free-form style directive into a region task.

The VLM is asked for the bounding box of the region to stylize and for the
style phrase (in quotes); the box then prompts a segmentation backend, and the
resulting mask is refined and re-boxed. The parse grammar is deliberately
narrow: the first bracketed 4-tuple of reals is the normalized box, the first
double-quoted span is the style.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import ndimage

from .backends import SegmentationBackend, VlmBackend
from .errors import (
    BackendError,
    ConfigError,
    EmptyRegionError,
    GroundingError,
    InvalidInputError,
    ParseError,
)
from .imaging import (
    BinaryMask,
    BoundingBox,
    ImageTensor,
    NormalizedBox,
    check_box_within,
    tight_bbox,
)

VLM_QUERY_TEMPLATE = (
    "For a given user prompt: '<style desc>', give the bounding box "
    "coordinates of the object that should be stylized. Also return the "
    "corresponding style in quotes."
)

# Holes strictly smaller than this fraction of the image area get filled.
HOLE_FILL_FRACTION = 0.001

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_BOX_RE = re.compile(
    r"\[\s*({n})\s*,\s*({n})\s*,\s*({n})\s*,\s*({n})\s*\]".format(n=_NUMBER)
)
_QUOTED_RE = re.compile(r'"([^"]*)"')


@dataclass(frozen=True)
class StyleDirective:
    """The user's full prompt, e.g. "apply cubism style to the building"."""

    raw_text: str

    def __post_init__(self):
        if not self.raw_text.strip():
            raise InvalidInputError("style directive is empty")


@dataclass(frozen=True)
class VlmResponse:
    raw: str
    box: NormalizedBox
    style: str


@dataclass(eq=False)
class RegionStyleTask:
    """One grounded unit of work: where to stylize and how."""

    region_phrase: str
    style_phrase: str
    mask: BinaryMask
    box: BoundingBox = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.style_phrase.strip():
            raise InvalidInputError("style phrase is empty")
        derived = tight_bbox(self.mask)  # raises on an empty mask
        if self.box is None:
            self.box = derived
        elif self.box != derived:
            raise InvalidInputError(
                f"box {self.box} is not the tight box {derived} of the mask"
            )


def build_vlm_query(directive: StyleDirective) -> str:
    """Fill the directive into the VLM query template (verbatim, unescaped)."""
    return VLM_QUERY_TEMPLATE.replace("<style desc>", directive.raw_text)


def extract_style_phrase(raw: str) -> str:
    """Return the content of the first double-quoted span in ``raw``."""
    m = _QUOTED_RE.search(raw)
    if m is None:
        raise ParseError("no double-quoted style phrase found", raw)
    if not m.group(1).strip():
        raise ParseError("first quoted span is empty", raw)
    return m.group(1)


def parse_vlm_response(raw: str, coord_order: str = "xyxy") -> VlmResponse:
    """Extract the normalized box and the style phrase from a VLM reply.

    Coordinates outside [0, 1] are clamped; a box that is degenerate after
    clamping is a parse error. ``coord_order`` selects how the 4-tuple is
    read ("xyxy" or "yxyx"); the default matches corner-format replies.
    """
    if coord_order not in ("xyxy", "yxyx"):
        raise ConfigError(f"unknown coordinate order {coord_order!r}")
    if not raw.strip():
        raise ParseError("empty VLM response", raw)

    values = None
    for m in _BOX_RE.finditer(raw):
        try:
            values = [float(g) for g in m.groups()]
            break
        except ValueError:  # pragma: no cover - regex admits only reals
            continue
    if values is None:
        raise ParseError("no bracketed 4-tuple of reals found", raw)

    if coord_order == "yxyx":
        y0, x0, y1, x1 = values
    else:
        x0, y0, x1, y1 = values
    x0, y0, x1, y1 = (min(max(v, 0.0), 1.0) for v in (x0, y0, x1, y1))
    if x0 >= x1 or y0 >= y1:
        raise ParseError(
            f"degenerate box after clamping: ({x0}, {y0}, {x1}, {y1})", raw
        )
    style = extract_style_phrase(raw)
    return VlmResponse(raw=raw, box=NormalizedBox(x0, y0, x1, y1), style=style)


def denormalize_box(nbox: NormalizedBox, width: int, height: int
                    ) -> BoundingBox:
    """Map a normalized box to pixels, widening with floor/ceil so every pixel
    whose center lies inside the normalized box is covered."""
    x0 = max(0, min(math.floor(nbox.x0 * width), width))
    x1 = max(0, min(math.ceil(nbox.x1 * width), width))
    y0 = max(0, min(math.floor(nbox.y0 * height), height))
    y1 = max(0, min(math.ceil(nbox.y1 * height), height))
    if x0 >= x1 or y0 >= y1:
        raise InvalidInputError(
            f"normalized box {nbox} collapses at {width}x{height}"
        )
    return BoundingBox(x0, y0, x1, y1)


def box_to_mask(image: ImageTensor, box: BoundingBox,
                backend: SegmentationBackend) -> BinaryMask:
    """Prompt the segmentation backend with ``box`` and return the
    highest-confidence mask, binarized at 0.5. Backend failures are retried
    once."""
    check_box_within(box, image.shape[0], image.shape[1])
    try:
        masks, scores = backend.segment(image, box)
    except BackendError:
        masks, scores = backend.segment(image, box)
    if not masks or len(masks) != len(scores):
        raise BackendError(
            f"backend returned {len(masks)} masks and {len(scores)} scores"
        )
    best = masks[max(range(len(scores)), key=lambda i: scores[i])]
    if tuple(best.shape) != tuple(image.shape[:2]):
        raise BackendError(
            f"backend mask shape {tuple(best.shape)} does not match image"
        )
    binary = (best >= 0.5).to(torch.float32)
    if binary.sum() == 0:
        raise EmptyRegionError("segmentation produced an empty mask")
    return binary


def refine_mask(mask: BinaryMask) -> BinaryMask:
    """Binarize and fill interior holes smaller than 0.1% of the image area.

    All connected foreground components are kept; multi-part objects are
    legal. Idempotent.
    """
    fg = mask.detach().cpu().numpy() > 0.5
    if not fg.any():
        raise EmptyRegionError("mask is empty")
    h, w = fg.shape
    labels, n = ndimage.label(~fg)
    if n > 0:
        border = np.zeros(n + 1, dtype=bool)
        for edge in (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]):
            border[np.unique(edge)] = True
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        fill = (~border) & (sizes < HOLE_FILL_FRACTION * h * w)
        fill[0] = False
        fg |= fill[labels]
    return torch.from_numpy(fg.astype(np.float32))


def ground(image: ImageTensor, directive: StyleDirective,
           vlm: VlmBackend, seg: SegmentationBackend | None = None, *,
           mask_override: BinaryMask | None = None,
           coord_order: str = "xyxy") -> RegionStyleTask:
    """Run the full grounding chain and return a validated region task.

    With ``mask_override`` the VLM is still queried, but only the style phrase
    is taken from its reply; mask and box come from the override. A reply that
    fails to parse is retried once with a fresh query before the error
    surfaces, tagged with the failing stage.
    """
    height, width = image.shape[0], image.shape[1]
    if seg is None and mask_override is None:
        raise InvalidInputError(
            "a segmentation backend is required unless a mask override is given"
        )
    prompt = build_vlm_query(directive)

    def ask() -> str:
        try:
            return vlm.query(image, prompt)
        except BackendError as exc:
            raise GroundingError("vlm", str(exc)) from exc

    raw = ask()
    if mask_override is not None:
        try:
            style = extract_style_phrase(raw)
        except ParseError:
            raw = ask()
            try:
                style = extract_style_phrase(raw)
            except ParseError as exc:
                raise GroundingError("parse", str(exc), raw=raw) from exc
        try:
            mask = refine_mask(mask_override)
        except EmptyRegionError as exc:
            raise GroundingError("refine", str(exc)) from exc
        return RegionStyleTask(region_phrase=directive.raw_text,
                               style_phrase=style, mask=mask)

    try:
        response = parse_vlm_response(raw, coord_order)
    except ParseError:
        raw = ask()
        try:
            response = parse_vlm_response(raw, coord_order)
        except ParseError as exc:
            raise GroundingError("parse", str(exc), raw=raw) from exc

    try:
        box = denormalize_box(response.box, width, height)
    except InvalidInputError as exc:
        raise GroundingError("denormalize", str(exc), raw=raw) from exc
    try:
        mask = box_to_mask(image, box, seg)
    except (BackendError, EmptyRegionError) as exc:
        raise GroundingError("segmentation", str(exc), raw=raw) from exc
    try:
        mask = refine_mask(mask)
    except EmptyRegionError as exc:
        raise GroundingError("refine", str(exc), raw=raw) from exc

    return RegionStyleTask(region_phrase=directive.raw_text,
                           style_phrase=response.style, mask=mask)
