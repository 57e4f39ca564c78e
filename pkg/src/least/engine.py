"""Per-region inference-time optimization and the multi-region driver.

One region is stylized by training a fresh :class:`StyleNetwork` on the
content image against the weighted masked objectives (Adam, a fixed number of
iterations, a fresh patch sample each iteration), then pasting the optimized
foreground over the untouched background. Multiple regions run sequentially,
each grounded against and applied to the previous composite; regions never
share network weights.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .backends import SegmentationBackend, VlmBackend
from .encoders import EncoderBundle
from .errors import (
    ConfigError,
    DivergenceError,
    InvalidInputError,
    LeastError,
    MultiRegionError,
)
from .grounding import RegionStyleTask, StyleDirective, ground
from .imaging import BinaryMask, ImageTensor, composite
from .losses import DEFAULT_SOURCE_TEXT, LossWeights, sample_patches, \
    text_delta, total_objective
from .network import StyleNetworkSpec, init_style_network, run_network

TRACE_KEYS = ("iter", "loss_total", "loss_dir", "loss_patch",
              "loss_content", "loss_tv")


@dataclass(frozen=True)
class EngineConfig:
    weights: LossWeights = LossWeights()
    patch_count: int = 64
    patch_size: int = 100
    resolution: int = 512
    learning_rate: float = 5e-4
    iterations: int = 200
    seed: int = 0
    source_text: str = DEFAULT_SOURCE_TEXT
    augment_patches: bool = False
    network: StyleNetworkSpec = StyleNetworkSpec()

    def validate(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.patch_count < 1 or self.patch_size < 1:
            raise ConfigError("patch count and size must be >= 1")
        if self.resolution < self.network.stride \
                or self.resolution % self.network.stride:
            raise ConfigError(
                f"resolution {self.resolution} must be a positive multiple "
                f"of {self.network.stride}"
            )

    def fingerprint(self) -> str:
        """Stable hash of every field, recorded next to each result."""
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(eq=False)
class StylizedResult:
    image: ImageTensor
    loss_trace: list[dict]
    task: RegionStyleTask
    config_fingerprint: str


@dataclass(eq=False)
class MultiRegionResult:
    image: ImageTensor
    regions: list[StylizedResult] = field(default_factory=list)


def optimize_region(content: ImageTensor, task: RegionStyleTask,
                    cfg: EngineConfig, enc: EncoderBundle) -> StylizedResult:
    """Optimize one region and return the composite plus its loss trace.

    Deterministic given ``cfg.seed`` (network init, patch sampling, and any
    patch augmentation all derive from it). A non-finite total aborts with the
    trace collected so far.
    """
    cfg.validate()
    if content.shape != (cfg.resolution, cfg.resolution, 3):
        raise InvalidInputError(
            f"content shape {tuple(content.shape)} does not match the "
            f"configured resolution {cfg.resolution}"
        )
    if task.mask.shape != content.shape[:2]:
        raise InvalidInputError("task mask does not match the content shape")

    net = init_style_network(cfg.network, cfg.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    dt = text_delta(task.style_phrase, cfg.source_text, enc)
    gen = torch.Generator().manual_seed(cfg.seed)
    content = content.detach().to(torch.float32)

    trace: list[dict] = []
    for i in range(cfg.iterations):
        optimizer.zero_grad(set_to_none=True)
        stylized = run_network(net, content)
        patches = sample_patches(task.box, cfg.patch_count, cfg.patch_size,
                                 gen)
        total, breakdown = total_objective(
            content, stylized, task, dt, patches, cfg.weights, enc,
            augment=cfg.augment_patches, generator=gen)
        entry = {
            "iter": i,
            "loss_total": float(total.detach()),
            "loss_dir": breakdown["dir"],
            "loss_patch": breakdown["patch"],
            "loss_content": breakdown["content"],
            "loss_tv": breakdown["tv"],
        }
        if not torch.isfinite(total):
            raise DivergenceError(
                f"non-finite total loss at iteration {i}", i, trace)
        trace.append(entry)
        total.backward()
        optimizer.step()

    with torch.no_grad():
        final = run_network(net, content)
    image = composite(final, content, task.mask)
    return StylizedResult(image=image, loss_trace=trace, task=task,
                          config_fingerprint=cfg.fingerprint())


def stylize_multi(content: ImageTensor, directives: list[StyleDirective],
                  cfg: EngineConfig, enc: EncoderBundle, *,
                  vlm: VlmBackend, seg: SegmentationBackend | None = None,
                  mask_override: BinaryMask | None = None,
                  coord_order: str = "xyxy",
                  region_optimizer=optimize_region) -> MultiRegionResult:
    """Ground and stylize a sequence of regions, each against the running
    composite; later regions win where masks overlap.

    Every region gets a fresh network; region ``k`` runs with seed
    ``cfg.seed + k``. ``mask_override`` is only legal with a single directive.
    ``region_optimizer`` exists for tests that need synthetic stylizations.
    """
    if not directives:
        raise InvalidInputError("no style directives given")
    if mask_override is not None and len(directives) != 1:
        raise InvalidInputError(
            "a mask override pairs with exactly one directive")

    current = content
    results: list[StylizedResult] = []
    for index, directive in enumerate(directives):
        try:
            task = ground(current, directive, vlm, seg,
                          mask_override=mask_override,
                          coord_order=coord_order)
        except LeastError as exc:
            raise MultiRegionError(index, "grounding", str(exc),
                                   partial_image=current,
                                   completed=results) from exc
        region_cfg = dataclasses.replace(cfg, seed=cfg.seed + index)
        try:
            result = region_optimizer(current, task, region_cfg, enc)
        except LeastError as exc:
            raise MultiRegionError(index, "optimization", str(exc),
                                   partial_image=current,
                                   completed=results) from exc
        results.append(result)
        current = result.image
    return MultiRegionResult(image=current, regions=results)


def mask_checksum(mask: BinaryMask) -> str:
    data = (mask.detach() > 0.5).to(torch.uint8).cpu().numpy().tobytes()
    return hashlib.sha256(data).hexdigest()


def write_trace(trace: list[dict], path):
    """One JSON record per iteration with the fixed trace keys."""
    with open(path, "w") as fh:
        for entry in trace:
            fh.write(json.dumps({k: entry[k] for k in TRACE_KEYS}) + "\n")


def read_trace(path) -> list[dict]:
    return [json.loads(line)
            for line in Path(path).read_text().splitlines() if line.strip()]


def write_sidecar(result: StylizedResult, seed: int, path,
                  extra: dict | None = None):
    """Result provenance: config fingerprint, seed, phrases, mask checksum."""
    record = {
        "config_fingerprint": result.config_fingerprint,
        "seed": seed,
        "region_phrase": result.task.region_phrase,
        "style_phrase": result.task.style_phrase,
        "mask_checksum": mask_checksum(result.task.mask),
        "box": list(result.task.box.as_tuple()),
    }
    if extra:
        record.update(extra)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
