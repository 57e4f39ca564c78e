"""Deterministic synthetic desk scenes for tests and offline experiments.

Five small scenes (house, disc, cup, tree, lamp), each a flat-color object on
a flat background with an exact ground-truth mask. Every color is an integer
multiple of 1/255 so images survive PNG round trips bit-exactly, and the
normalized boxes are pixel fractions of a power-of-two canvas so box
denormalization is exact as well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import InvalidInputError
from .grounding import StyleDirective, build_vlm_query
from .imaging import (
    BinaryMask,
    BoundingBox,
    ImageTensor,
    NormalizedBox,
    save_image,
    save_mask,
    tight_bbox,
)

DESK_SPECS: tuple[tuple[str, str, str, str], ...] = (
    # (name, region word, style, alternate style)
    ("house", "house", "cubism", "starry night"),
    ("disc", "ball", "fire", "mosaic"),
    ("cup", "cup", "watercolor", "stained glass"),
    ("tree", "tree", "autumn", "van gogh"),
    ("lamp", "lamp", "neon", "sketch"),
)


@dataclass(frozen=True)
class DeskFixture:
    name: str
    region: str
    style: str
    alt_style: str
    directive: str
    image: ImageTensor
    mask: BinaryMask
    box: BoundingBox
    normalized_box: NormalizedBox
    vlm_response: str

    @property
    def alt_directive(self) -> str:
        return directive_for(self.region, self.alt_style)


def directive_for(region: str, style: str) -> str:
    return f"apply {style} style to the {region} in the image"


def _color(r: int, g: int, b: int) -> torch.Tensor:
    return torch.tensor([r, g, b], dtype=torch.float32) / 255.0


def _grid(size: int):
    ys = torch.arange(size, dtype=torch.float32).view(-1, 1)
    xs = torch.arange(size, dtype=torch.float32).view(1, -1)
    return ys, xs


def _rect(ys, xs, size, x0, y0, x1, y1):
    return ((xs >= round(x0 * size)) & (xs < round(x1 * size)) &
            (ys >= round(y0 * size)) & (ys < round(y1 * size)))


def _disc(ys, xs, size, cx, cy, radius):
    r = radius * size
    return ((xs - cx * size) ** 2 + (ys - cy * size) ** 2) <= r * r


def _wedge(ys, xs, size, cx, y_top, y_bottom, half_top, half_bottom):
    """Vertical trapezoid; a triangle when half_top is 0."""
    ya, yb = y_top * size, y_bottom * size
    frac = ((ys - ya) / (yb - ya)).clamp(0.0, 1.0)
    halfw = (half_top + frac * (half_bottom - half_top)) * size
    return (ys >= ya) & (ys < yb) & ((xs - cx * size).abs() <= halfw)


def _scene_house(size):
    ys, xs = _grid(size)
    image = torch.empty(size, size, 3)
    image[:] = _color(158, 203, 230)
    image[_rect(ys, xs, size, 0.0, 0.66, 1.0, 1.0)] = _color(96, 160, 96)

    body = _rect(ys, xs, size, 0.30, 0.48, 0.62, 0.78)
    roof = _wedge(ys, xs, size, 0.46, 0.34, 0.48, 0.0, 0.19)
    door = _rect(ys, xs, size, 0.42, 0.62, 0.50, 0.78)
    image[body] = _color(196, 96, 64)
    image[roof] = _color(120, 64, 48)
    image[door] = _color(72, 48, 32)
    return image, (body | roof).to(torch.float32)


def _scene_disc(size):
    ys, xs = _grid(size)
    image = torch.ones(size, size, 3)
    disc = _disc(ys, xs, size, 0.5, 0.5, 0.22)
    image[disc] = _color(0, 0, 0)
    return image, disc.to(torch.float32)


def _scene_cup(size):
    ys, xs = _grid(size)
    image = torch.empty(size, size, 3)
    image[:] = _color(222, 214, 200)
    image[_rect(ys, xs, size, 0.0, 0.60, 1.0, 1.0)] = _color(120, 88, 56)

    body = _rect(ys, xs, size, 0.40, 0.42, 0.58, 0.62)
    ring = (_rect(ys, xs, size, 0.58, 0.46, 0.66, 0.56) &
            ~_rect(ys, xs, size, 0.60, 0.48, 0.64, 0.54))
    cup = body | ring
    image[cup] = _color(48, 96, 160)
    return image, cup.to(torch.float32)


def _scene_tree(size):
    ys, xs = _grid(size)
    image = torch.empty(size, size, 3)
    image[:] = _color(200, 224, 240)
    image[_rect(ys, xs, size, 0.0, 0.75, 1.0, 1.0)] = _color(88, 144, 80)

    trunk = _rect(ys, xs, size, 0.47, 0.55, 0.53, 0.80)
    canopy = _disc(ys, xs, size, 0.5, 0.42, 0.16)
    tree = trunk | canopy
    image[trunk] = _color(104, 72, 40)
    image[canopy] = _color(40, 112, 48)
    return image, tree.to(torch.float32)


def _scene_lamp(size):
    ys, xs = _grid(size)
    image = torch.empty(size, size, 3)
    image[:] = _color(236, 232, 220)
    image[_rect(ys, xs, size, 0.0, 0.80, 1.0, 1.0)] = _color(150, 150, 158)

    pole = _rect(ys, xs, size, 0.49, 0.40, 0.51, 0.80)
    base = _rect(ys, xs, size, 0.42, 0.78, 0.58, 0.80)
    shade = _wedge(ys, xs, size, 0.50, 0.28, 0.40, 0.06, 0.16)
    lamp = pole | base | shade
    image[pole | base] = _color(60, 60, 70)
    image[shade] = _color(180, 60, 60)
    return image, lamp.to(torch.float32)


_SCENES = {
    "house": _scene_house,
    "disc": _scene_disc,
    "cup": _scene_cup,
    "tree": _scene_tree,
    "lamp": _scene_lamp,
}


def desk_fixture(name: str, size: int = 512) -> DeskFixture:
    if size <= 0 or size % 8 != 0:
        raise InvalidInputError(f"size must be a positive multiple of 8, "
                                f"got {size}")
    try:
        builder = _SCENES[name]
        _, region, style, alt_style = next(
            s for s in DESK_SPECS if s[0] == name)
    except (KeyError, StopIteration):
        raise InvalidInputError(f"unknown desk scene {name!r}") from None

    image, mask = builder(size)
    box = tight_bbox(mask)
    nbox = NormalizedBox(box.x0 / size, box.y0 / size,
                         box.x1 / size, box.y1 / size)
    response = (f"The {region} is at [{nbox.x0!r}, {nbox.y0!r}, "
                f"{nbox.x1!r}, {nbox.y1!r}] with style \"{style}\".")
    return DeskFixture(
        name=name,
        region=region,
        style=style,
        alt_style=alt_style,
        directive=directive_for(region, style),
        image=image,
        mask=mask,
        box=box,
        normalized_box=nbox,
        vlm_response=response,
    )


def make_desk_fixtures(size: int = 512) -> tuple[DeskFixture, ...]:
    return tuple(desk_fixture(spec[0], size) for spec in DESK_SPECS)


def make_desk_suite(out_dir, size: int = 512) -> tuple[DeskFixture, ...]:
    """Write the five scenes to disk as a self-contained benchmark suite.

    Layout: ``images/*.png``, ``masks/*.png``, ``transcripts.jsonl`` (fixture
    VLM records keyed by the exact query each scene produces), and
    ``manifest.json`` with mask overrides so the suite runs fully offline.
    """
    out_dir = Path(out_dir)
    fixtures = make_desk_fixtures(size)

    entries = []
    records = []
    for fix in fixtures:
        save_image(fix.image, out_dir / "images" / f"{fix.name}.png")
        save_mask(fix.mask, out_dir / "masks" / f"{fix.name}.png")
        entries.append({
            "image_path": f"images/{fix.name}.png",
            "prompt": fix.directive,
            "mask_path": f"masks/{fix.name}.png",
        })
        records.append({
            "prompt": build_vlm_query(StyleDirective(fix.directive)),
            "response_text": fix.vlm_response,
        })

    with open(out_dir / "manifest.json", "w") as fh:
        json.dump({"entries": entries}, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "transcripts.jsonl", "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return fixtures
