"""Command-line surface: `least stylize`, `least ground`, `least eval`.

Configuration precedence is defaults < environment (endpoint variables
LEAST_VLM_ENDPOINT / LEAST_SEG_ENDPOINT) < config file < flags, and the
effective config is echoed into the result sidecar. Exit codes: 0 success,
1 pipeline error, 2 grounding-parse error, 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .backends import (
    BoxFillSegmenter,
    FixtureVlmBackend,
    HttpSegmentationBackend,
    HttpVlmBackend,
)
from .encoders import make_bundle
from .engine import EngineConfig, mask_checksum, stylize_multi
from .errors import ConfigError, GroundingError, LeastError, ParseError
from .evaluation import BenchmarkManifest, run_benchmark
from .grounding import StyleDirective, ground
from .imaging import load_image, load_mask, save_image, save_mask
from .losses import DEFAULT_SOURCE_TEXT, LossWeights
from .network import StyleNetworkSpec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_PARSE = 2
EXIT_USAGE = 64

ENV_VLM_ENDPOINT = "LEAST_VLM_ENDPOINT"
ENV_SEG_ENDPOINT = "LEAST_SEG_ENDPOINT"


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; field names double as config-file keys."""

    lambda_dir: float = 500.0
    lambda_patch: float = 1000.0
    lambda_content: float = 150.0
    lambda_tv: float = 2e-3
    patch_count: int = 64
    patch_size: int = 100
    resolution: int = 512
    learning_rate: float = 5e-4
    iterations: int = 200
    seed: int = 0
    source_text: str = DEFAULT_SOURCE_TEXT
    augment_patches: bool = False
    vlm_endpoint: str = ""
    seg_endpoint: str = ""
    fixture: str = ""
    encoders: str = "clip-vgg"
    coord_order: str = "xyxy"
    out_dir: str = "runs/least"
    workers: int = 1
    verbose: bool = False

    def engine(self) -> EngineConfig:
        weights = LossWeights(
            lambda_dir=self.lambda_dir,
            lambda_patch=self.lambda_patch,
            lambda_content=self.lambda_content,
            lambda_tv=self.lambda_tv,
        )
        cfg = EngineConfig(
            weights=weights,
            patch_count=self.patch_count,
            patch_size=self.patch_size,
            resolution=self.resolution,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            seed=self.seed,
            source_text=self.source_text,
            augment_patches=self.augment_patches,
            network=StyleNetworkSpec(),
        )
        cfg.validate()
        return cfg


_FIELD_TYPES = {f.name: type(getattr(RunConfig(), f.name))
                for f in dataclasses.fields(RunConfig)}

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind is bool:
            word = raw.strip().lower()
            if word in _TRUE_WORDS:
                return True
            if word in _FALSE_WORDS:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def parse_config_file(path) -> dict[str, str]:
    """Plain key=value lines; '#' comments and blank lines are ignored."""
    values: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, "
                              f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def build_run_config(file_values: dict | None = None,
                     flag_values: dict | None = None,
                     env: dict | None = None) -> RunConfig:
    """Merge defaults < env endpoints < file values < flag values."""
    env = os.environ if env is None else env
    merged: dict = {}
    if env.get(ENV_VLM_ENDPOINT):
        merged["vlm_endpoint"] = env[ENV_VLM_ENDPOINT]
    if env.get(ENV_SEG_ENDPOINT):
        merged["seg_endpoint"] = env[ENV_SEG_ENDPOINT]
    for key, value in (file_values or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, value)
    for key, value in (flag_values or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value
    return RunConfig(**merged)


def _flags_from_args(args: argparse.Namespace) -> dict:
    flags = {}
    for name in _FIELD_TYPES:
        value = getattr(args, name, None)
        if value is not None:
            flags[name] = value
    return flags


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else None
    cfg = build_run_config(file_values, _flags_from_args(args))
    logging.basicConfig(
        level=logging.DEBUG if cfg.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return cfg


def _make_backends(cfg: RunConfig, *, need_seg: bool):
    """VLM backend plus (optionally) a segmentation backend.

    A fixture transcript implies the box-fill segmenter so offline runs
    need no endpoints at all.
    """
    if cfg.fixture:
        vlm = FixtureVlmBackend(cfg.fixture)
        seg = BoxFillSegmenter()
        return vlm, seg
    if not cfg.vlm_endpoint:
        raise ConfigError(
            f"no VLM endpoint: pass --vlm-endpoint, set {ENV_VLM_ENDPOINT}, "
            f"or use --fixture for an offline run")
    vlm = HttpVlmBackend(cfg.vlm_endpoint)
    seg = None
    if cfg.seg_endpoint:
        seg = HttpSegmentationBackend(cfg.seg_endpoint)
    elif need_seg:
        raise ConfigError(
            f"no segmentation endpoint: pass --seg-endpoint or set "
            f"{ENV_SEG_ENDPOINT}")
    return vlm, seg


def _parse_failure(exc: Exception):
    """Return the parse-stage error behind ``exc``, if any, walking causes."""
    seen = exc
    while seen is not None:
        if isinstance(seen, ParseError):
            return seen
        if isinstance(seen, GroundingError) and seen.stage == "parse":
            return seen
        seen = seen.__cause__
    return None


def _dump_raw_vlm_text(exc, out_dir: Path):
    raw = getattr(exc, "raw", "") or ""
    if not raw:
        return
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "vlm_raw.txt").write_text(raw)
    except OSError:
        pass
    print(f"raw VLM reply:\n{raw}", file=sys.stderr)


def cmd_stylize(args) -> int:
    cfg = _config_from_args(args)
    engine_cfg = cfg.engine()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    override = None
    if args.mask:
        override = load_mask(args.mask, cfg.resolution)
    vlm, seg = _make_backends(cfg, need_seg=override is None)
    enc = make_bundle(cfg.encoders)
    content = load_image(args.image, cfg.resolution)
    directives = [StyleDirective(p) for p in args.prompt]

    result = stylize_multi(content, directives, engine_cfg, enc,
                           vlm=vlm, seg=seg, mask_override=override,
                           coord_order=cfg.coord_order)

    save_image(result.image, out_dir / "output.png")
    with open(out_dir / "trace.jsonl", "w") as fh:
        for index, region in enumerate(result.regions):
            for entry in region.loss_trace:
                fh.write(json.dumps({"region": index, **entry}) + "\n")
    sidecar = {
        "config": dataclasses.asdict(cfg),
        "regions": [
            {
                "config_fingerprint": region.config_fingerprint,
                "seed": engine_cfg.seed + index,
                "region_phrase": region.task.region_phrase,
                "style_phrase": region.task.style_phrase,
                "mask_checksum": mask_checksum(region.task.mask),
                "box": list(region.task.box.as_tuple()),
            }
            for index, region in enumerate(result.regions)
        ],
    }
    with open(out_dir / "sidecar.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")

    for index, region in enumerate(result.regions):
        first = region.loss_trace[0]["loss_total"]
        last = region.loss_trace[-1]["loss_total"]
        print(f"region {index} style={region.task.style_phrase!r}: "
              f"loss {first:.4f} -> {last:.4f} "
              f"({len(region.loss_trace)} iterations)")
    print(f"wrote {out_dir / 'output.png'}")
    return EXIT_OK


def cmd_ground(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    vlm, seg = _make_backends(cfg, need_seg=True)
    content = load_image(args.image, cfg.resolution)
    task = ground(content, StyleDirective(args.prompt), vlm, seg,
                  coord_order=cfg.coord_order)

    save_mask(task.mask, out_dir / "mask.png")
    payload = {"box": list(task.box.as_tuple()), "style": task.style_phrase}
    with open(out_dir / "grounding.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    if args.scores_only and not args.outputs:
        raise UsageError("--scores-only requires --outputs DIR")

    manifest = BenchmarkManifest.load(args.manifest)
    vlm, seg = _make_backends(cfg, need_seg=False)
    enc = make_bundle(cfg.encoders)
    report = run_benchmark(
        manifest, cfg.engine(), vlm=vlm, seg=seg, enc=enc,
        out_dir=cfg.out_dir, workers=cfg.workers,
        scores_only_dir=args.outputs if args.scores_only else None,
        coord_order=cfg.coord_order)

    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    return EXIT_OK


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--out-dir", dest="out_dir", help="output directory")
    sub.add_argument("--fixture",
                     help="VLM transcript JSONL for offline runs "
                          "(implies the box-fill segmenter)")
    sub.add_argument("--vlm-endpoint", dest="vlm_endpoint")
    sub.add_argument("--seg-endpoint", dest="seg_endpoint")
    sub.add_argument("--encoders", choices=("clip-vgg", "toy"))
    sub.add_argument("--coord-order", dest="coord_order",
                     choices=("xyxy", "yxyx"),
                     help="coordinate convention of VLM box replies")
    sub.add_argument("-v", "--verbose", action="store_true", default=None)


def _add_engine_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--iterations", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--lambda-dir", dest="lambda_dir", type=float)
    sub.add_argument("--lambda-patch", dest="lambda_patch", type=float)
    sub.add_argument("--lambda-content", dest="lambda_content", type=float)
    sub.add_argument("--lambda-tv", dest="lambda_tv", type=float)
    sub.add_argument("--patch-count", dest="patch_count", type=int)
    sub.add_argument("--patch-size", dest="patch_size", type=int)
    sub.add_argument("--resolution", type=int)
    sub.add_argument("--source-text", dest="source_text")
    sub.add_argument("--augment-patches", dest="augment_patches",
                     action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="least",
                     description="Text-driven local style transfer")
    commands = parser.add_subparsers(dest="command", required=True)

    sty = commands.add_parser("stylize", parents=[], help="stylize regions")
    sty.add_argument("--image", required=True)
    sty.add_argument("--prompt", action="append", required=True,
                     help="style directive; repeat for multiple regions "
                          "(processed in flag order)")
    sty.add_argument("--mask", help="mask override; pairs with one prompt")
    _add_common_flags(sty)
    _add_engine_flags(sty)
    sty.set_defaults(func=cmd_stylize)

    grd = commands.add_parser("ground", help="grounding only, no styling")
    grd.add_argument("--image", required=True)
    grd.add_argument("--prompt", required=True)
    grd.add_argument("--resolution", type=int)
    _add_common_flags(grd)
    grd.set_defaults(func=cmd_ground)

    evl = commands.add_parser("eval", help="benchmark a manifest")
    evl.add_argument("--manifest", required=True)
    evl.add_argument("--workers", type=int)
    evl.add_argument("--scores-only", dest="scores_only",
                     action="store_true", default=False,
                     help="score precomputed outputs instead of stylizing")
    evl.add_argument("--outputs", help="directory of precomputed outputs, "
                                       "named <entry_id>.png")
    _add_common_flags(evl)
    _add_engine_flags(evl)
    evl.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = Path(getattr(args, "out_dir", None) or "runs/least")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"least: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"least: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LeastError as exc:
        parse_exc = _parse_failure(exc)
        if parse_exc is not None:
            print(f"least: grounding parse error: {exc}", file=sys.stderr)
            _dump_raw_vlm_text(parse_exc, out_dir)
            return EXIT_PARSE
        print(f"least: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    raise SystemExit(main())
