"""Benchmark runner and the masked crop alignment score.

The score for a stylized region is the cosine similarity (scaled by 100)
between the text embedding of the style phrase and the image embedding of the
masked, box-cropped output. The runner walks a manifest of image/prompt
entries, stylizes each one (or scores precomputed outputs), and emits a CSV
report, a JSONL record stream, and side-by-side comparison grids.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .backends import SegmentationBackend, VlmBackend
from .encoders import EncoderBundle
from .engine import EngineConfig, optimize_region
from .errors import (
    BenchmarkRunError,
    ImageDecodeError,
    InvalidInputError,
    LeastError,
)
from .grounding import StyleDirective, ground
from .imaging import (
    BinaryMask,
    ImageTensor,
    apply_mask,
    crop_resize,
    load_image,
    load_mask,
    save_image,
    tight_bbox,
)
from .losses import directional_term

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    prompt: str
    mask_path: str | None = None


@dataclass(frozen=True)
class BenchmarkManifest:
    entries: tuple[ManifestEntry, ...]

    @staticmethod
    def load(path) -> "BenchmarkManifest":
        """Parse a manifest JSON file.

        Relative image/mask paths are resolved against the manifest's own
        directory, so a suite folder can be moved or shipped as a unit.
        """
        root = Path(path).parent

        def resolve(value):
            if value is None:
                return None
            p = Path(str(value))
            return str(p if p.is_absolute() else root / p)

        def pick(e, *keys):
            for key in keys:
                if e.get(key):
                    return e[key]
            return None

        try:
            body = json.loads(Path(path).read_text())
            raw_entries = body["entries"]
            entries = tuple(
                ManifestEntry(image_path=resolve(pick(e, "image_path",
                                                      "image")),
                              prompt=str(e["prompt"]),
                              mask_path=resolve(pick(e, "mask_path", "mask")))
                for e in raw_entries
            )
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InvalidInputError(f"bad manifest {path!r}: {exc}") from exc
        if not entries:
            raise InvalidInputError(f"manifest {path!r} has no entries")
        if any(e.image_path is None for e in entries):
            raise InvalidInputError(f"manifest {path!r} entry missing image")
        return BenchmarkManifest(entries=entries)


@dataclass
class EvaluationRecord:
    entry_id: str
    image_path: str
    prompt: str
    style: str
    clip_score: float
    clip_score_baseline: float
    background_max_abs_diff: float
    runtime_seconds: float


@dataclass
class EvaluationFailure:
    entry_id: str
    image_path: str
    prompt: str
    error: str


@dataclass
class EvaluationReport:
    records: list[EvaluationRecord] = field(default_factory=list)
    failures: list[EvaluationFailure] = field(default_factory=list)

    def summary(self) -> dict:
        scores = [r.clip_score for r in self.records]
        baselines = [r.clip_score_baseline for r in self.records]

        def mean(xs):
            return sum(xs) / len(xs) if xs else 0.0

        def pstd(xs):
            if not xs:
                return 0.0
            m = mean(xs)
            return (sum((x - m) ** 2 for x in xs) / len(xs)) ** 0.5

        return {
            "n_entries": len(self.records) + len(self.failures),
            "n_failures": len(self.failures),
            "clip_score_mean": mean(scores),
            "clip_score_stddev": pstd(scores),
            "clip_score_baseline_mean": mean(baselines),
            "clip_score_baseline_stddev": pstd(baselines),
        }


def masked_clip_score(image: ImageTensor, mask: BinaryMask, style: str,
                      enc: EncoderBundle) -> float:
    """100 * cos(image embedding of the masked box crop, style embedding).

    Masking precedes cropping, so background pixels can never affect the
    score.
    """
    box = tight_bbox(mask)  # raises EmptyRegionError on an empty mask
    crop = crop_resize(apply_mask(image, mask), box, enc.image_input_size)
    with torch.no_grad():
        e_img = enc.embed_image(crop)
    e_txt = enc.embed_text(style)
    value = 1.0 - directional_term(e_txt, e_img)
    return float(100.0 * value)


def entry_id_for(index: int, entry: ManifestEntry) -> str:
    return f"{index:03d}_{Path(entry.image_path).stem}"


def _run_entry(index: int, entry: ManifestEntry, cfg: EngineConfig, *,
               vlm: VlmBackend, seg: SegmentationBackend | None,
               enc: EncoderBundle, out_dir: Path,
               scores_only_dir: Path | None, coord_order: str
               ) -> EvaluationRecord:
    start = time.monotonic()
    content = load_image(entry.image_path, cfg.resolution)
    override = (load_mask(entry.mask_path, cfg.resolution)
                if entry.mask_path else None)
    task = ground(content, StyleDirective(entry.prompt), vlm, seg,
                  mask_override=override, coord_order=coord_order)

    eid = entry_id_for(index, entry)
    if scores_only_dir is not None:
        out_path = scores_only_dir / f"{eid}.png"
        if not out_path.exists():
            raise ImageDecodeError(f"no precomputed output {out_path}")
        output = load_image(out_path, cfg.resolution)
    else:
        result = optimize_region(content, task, cfg, enc)
        output = result.image
        save_image(output, out_dir / f"{eid}.png")

    score = masked_clip_score(output, task.mask, task.style_phrase, enc)
    baseline = masked_clip_score(content, task.mask, task.style_phrase, enc)
    background = (output - content).abs() * (1.0 - task.mask).unsqueeze(-1)

    grid = torch.cat([content, task.mask.unsqueeze(-1).expand_as(content),
                      output], dim=1)
    save_image(grid, out_dir / "grids" / f"{eid}.png")

    return EvaluationRecord(
        entry_id=eid,
        image_path=entry.image_path,
        prompt=entry.prompt,
        style=task.style_phrase,
        clip_score=score,
        clip_score_baseline=baseline,
        background_max_abs_diff=float(background.max()),
        runtime_seconds=time.monotonic() - start,
    )


def run_benchmark(manifest: BenchmarkManifest, cfg: EngineConfig, *,
                  vlm: VlmBackend, seg: SegmentationBackend | None,
                  enc: EncoderBundle, out_dir, workers: int = 1,
                  scores_only_dir=None, coord_order: str = "xyxy"
                  ) -> EvaluationReport:
    """Stylize and score every manifest entry; per-entry failures are recorded
    and skipped, and the run fails only when more than half the entries do.

    Writes ``report.csv``, ``records.jsonl``, ``summary.json``, per-entry
    outputs, and ``grids/`` comparisons under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_only = Path(scores_only_dir) if scores_only_dir else None

    report = EvaluationReport()
    outcomes: list[tuple[int, EvaluationRecord | EvaluationFailure]] = []

    def run_one(pair):
        index, entry = pair
        try:
            rec = _run_entry(index, entry, cfg, vlm=vlm, seg=seg, enc=enc,
                             out_dir=out_dir, scores_only_dir=scores_only,
                             coord_order=coord_order)
            return index, rec
        except LeastError as exc:
            logger.warning("entry %d failed: %s", index, exc)
            return index, EvaluationFailure(
                entry_id=entry_id_for(index, entry),
                image_path=entry.image_path, prompt=entry.prompt,
                error=str(exc))

    pairs = list(enumerate(manifest.entries))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, pairs))
    else:
        outcomes = [run_one(p) for p in pairs]

    for _, outcome in sorted(outcomes, key=lambda t: t[0]):
        if isinstance(outcome, EvaluationRecord):
            report.records.append(outcome)
        else:
            report.failures.append(outcome)

    write_report(report, out_dir)
    if report.failures and len(report.failures) * 2 > len(manifest.entries):
        raise BenchmarkRunError(
            f"{len(report.failures)} of {len(manifest.entries)} entries failed"
        )
    return report


def write_report(report: EvaluationReport, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    columns = ("entry_id", "image_path", "prompt", "style", "clip_score",
               "clip_score_baseline", "background_max_abs_diff",
               "runtime_seconds", "failed", "error")
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for rec in report.records:
            writer.writerow({**rec.__dict__, "failed": False, "error": ""})
        for fail in report.failures:
            writer.writerow({
                "entry_id": fail.entry_id, "image_path": fail.image_path,
                "prompt": fail.prompt, "style": "", "clip_score": "",
                "clip_score_baseline": "", "background_max_abs_diff": "",
                "runtime_seconds": "", "failed": True, "error": fail.error,
            })

    with open(out_dir / "records.jsonl", "w") as fh:
        for rec in report.records:
            fh.write(json.dumps({**rec.__dict__, "failed": False}) + "\n")
        for fail in report.failures:
            fh.write(json.dumps({**fail.__dict__, "failed": True}) + "\n")

    with open(out_dir / "summary.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
