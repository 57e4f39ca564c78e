import json

import pytest
import torch

from least.backends import BoxFillSegmenter, FixtureVlmBackend
from least.encoders import toy_bundle
from least.engine import (
    TRACE_KEYS,
    EngineConfig,
    StylizedResult,
    mask_checksum,
    optimize_region,
    read_trace,
    stylize_multi,
    write_sidecar,
    write_trace,
)
from least.errors import (
    ConfigError,
    DivergenceError,
    InvalidInputError,
    MultiRegionError,
)
from least.grounding import RegionStyleTask, StyleDirective, build_vlm_query
from least.imaging import composite
from least.losses import LossWeights
from least.network import StyleNetworkSpec, init_style_network, run_network
from stubs import mean_color_bundle, nan_bundle

SMALL = EngineConfig(patch_count=4, patch_size=8, resolution=24,
                     iterations=3, seed=0)


def small_task(size=24):
    mask = torch.zeros(size, size)
    mask[4:20, 6:18] = 1.0
    return RegionStyleTask(region_phrase="the block",
                           style_phrase="cubism", mask=mask)


def small_content(size=24, seed=5):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(size, size, 3, generator=gen)


@pytest.fixture(scope="module")
def enc():
    return mean_color_bundle()


class TestEngineConfig:
    def test_defaults(self):
        cfg = EngineConfig()
        assert cfg.weights == LossWeights()
        assert cfg.patch_count == 64
        assert cfg.patch_size == 100
        assert cfg.resolution == 512
        assert cfg.learning_rate == 5e-4
        assert cfg.iterations == 200
        assert cfg.source_text == "a Photo"

    @pytest.mark.parametrize("kwargs", [
        {"iterations": 0},
        {"learning_rate": 0.0},
        {"patch_count": 0},
        {"patch_size": 0},
        {"resolution": 30},
        {"resolution": 0},
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigError):
            EngineConfig(**kwargs).validate()

    def test_fingerprint_stable_and_sensitive(self):
        a = EngineConfig().fingerprint()
        b = EngineConfig().fingerprint()
        c = EngineConfig(seed=1).fingerprint()
        assert a == b
        assert a != c
        assert len(a) == 64


class TestOptimizeRegion:
    def test_trace_shape_and_keys(self, enc):
        result = optimize_region(small_content(), small_task(), SMALL, enc)
        assert len(result.loss_trace) == SMALL.iterations
        for i, entry in enumerate(result.loss_trace):
            assert entry["iter"] == i
            assert set(TRACE_KEYS) <= set(entry)

    def test_background_is_bit_identical(self, enc):
        content = small_content()
        task = small_task()
        result = optimize_region(content, task, SMALL, enc)
        bg = (1 - task.mask).bool()
        assert torch.equal(result.image[bg], content[bg])

    def test_deterministic_across_runs(self, enc):
        a = optimize_region(small_content(), small_task(), SMALL, enc)
        b = optimize_region(small_content(), small_task(), SMALL, enc)
        assert torch.equal(a.image, b.image)
        assert a.loss_trace == b.loss_trace

    def test_seed_changes_the_run(self, enc):
        a = optimize_region(small_content(), small_task(), SMALL, enc)
        b = optimize_region(small_content(), small_task(),
                            EngineConfig(patch_count=4, patch_size=8,
                                         resolution=24, iterations=3, seed=9),
                            enc)
        assert not torch.equal(a.image, b.image)

    def test_one_iteration_zero_weights_is_initial_composite(self, enc):
        content = small_content()
        task = small_task()
        cfg = EngineConfig(weights=LossWeights(0.0, 0.0, 0.0, 0.0),
                           patch_count=4, patch_size=8, resolution=24,
                           iterations=1, seed=3)
        result = optimize_region(content, task, cfg, enc)

        net = init_style_network(StyleNetworkSpec(), seed=3)
        with torch.no_grad():
            want = composite(run_network(net, content), content, task.mask)
        assert torch.equal(result.image, want)

    def test_descent_on_desk_scene(self, desk64):
        house = desk64[0]
        cfg = EngineConfig(patch_count=8, patch_size=16, resolution=64,
                           iterations=10, seed=0)
        task = RegionStyleTask(region_phrase=house.directive,
                               style_phrase=house.style, mask=house.mask)
        result = optimize_region(house.image, task, cfg, toy_bundle())
        assert result.loss_trace[-1]["loss_total"] \
            < result.loss_trace[0]["loss_total"]

    def test_divergence_raises_with_trace(self, enc):
        bad = nan_bundle(enc)
        with pytest.raises(DivergenceError) as info:
            optimize_region(small_content(), small_task(), SMALL, bad)
        assert info.value.iteration == 0
        assert info.value.trace == []

    def test_content_must_match_resolution(self, enc):
        with pytest.raises(InvalidInputError):
            optimize_region(small_content(16), small_task(16), SMALL, enc)

    def test_fingerprint_recorded(self, enc):
        result = optimize_region(small_content(), small_task(), SMALL, enc)
        assert result.config_fingerprint == SMALL.fingerprint()


class _PaintOptimizer:
    """Stand-in for optimize_region: paints the mask a constant color."""

    def __init__(self, colors, fail_at=None):
        self.colors = list(colors)
        self.fail_at = fail_at
        self.calls = []

    def __call__(self, content, task, cfg, enc):
        index = len(self.calls)
        self.calls.append(cfg)
        if self.fail_at is not None and index == self.fail_at:
            raise InvalidInputError("synthetic optimizer failure")
        paint = torch.full_like(content, self.colors[index])
        image = composite(paint, content, task.mask)
        trace = [{k: 0.0 for k in TRACE_KEYS}]
        return StylizedResult(image=image, loss_trace=trace, task=task,
                              config_fingerprint=cfg.fingerprint())


def _two_region_setup(boxes, styles=("red", "blue")):
    """Fixture VLM + box-fill segmenter for two directives on a 16x16 image."""
    directives = [StyleDirective(f"apply {s} style to region {i}")
                  for i, s in enumerate(styles)]
    records = []
    for directive, box, style in zip(directives, boxes, styles):
        response = (f"[{box[0]!r}, {box[1]!r}, {box[2]!r}, {box[3]!r}] "
                    f"\"{style}\"")
        records.append({"prompt": build_vlm_query(directive),
                        "response_text": response})
    content = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(6))
    cfg = EngineConfig(patch_count=2, patch_size=4, resolution=16,
                       iterations=1, seed=10)
    return content, directives, FixtureVlmBackend(records), cfg


class TestStylizeMulti:
    def test_disjoint_regions_pixel_provenance(self, enc):
        content, directives, vlm, cfg = _two_region_setup(
            [(0.0, 0.0, 0.25, 0.25), (0.5, 0.5, 1.0, 1.0)])
        picker = _PaintOptimizer([0.25, 0.75])
        result = stylize_multi(content, directives, cfg, enc, vlm=vlm,
                               seg=BoxFillSegmenter(),
                               region_optimizer=picker)
        out = result.image
        assert torch.all(out[0:4, 0:4] == 0.25)
        assert torch.all(out[8:16, 8:16] == 0.75)
        union = torch.zeros(16, 16, dtype=torch.bool)
        union[0:4, 0:4] = True
        union[8:16, 8:16] = True
        assert torch.equal(out[~union], content[~union])
        assert len(result.regions) == 2

    def test_overlap_carries_second_region(self, enc):
        content, directives, vlm, cfg = _two_region_setup(
            [(0.0, 0.0, 0.5, 0.5), (0.25, 0.25, 0.75, 0.75)])
        picker = _PaintOptimizer([0.25, 0.75])
        result = stylize_multi(content, directives, cfg, enc, vlm=vlm,
                               seg=BoxFillSegmenter(),
                               region_optimizer=picker)
        out = result.image
        assert torch.all(out[4:8, 4:8] == 0.75)  # overlap = second color
        assert torch.all(out[0:4, 0:4] == 0.25)  # first-only area
        assert torch.all(out[8:12, 8:12] == 0.75)
        outside = torch.ones(16, 16, dtype=torch.bool)
        outside[0:8, 0:8] = False
        outside[4:12, 4:12] = False
        assert torch.equal(out[outside], content[outside])

    def test_regions_get_consecutive_seeds(self, enc):
        content, directives, vlm, cfg = _two_region_setup(
            [(0.0, 0.0, 0.25, 0.25), (0.5, 0.5, 1.0, 1.0)])
        picker = _PaintOptimizer([0.2, 0.4])
        stylize_multi(content, directives, cfg, enc, vlm=vlm,
                      seg=BoxFillSegmenter(), region_optimizer=picker)
        assert [c.seed for c in picker.calls] == [cfg.seed, cfg.seed + 1]

    def test_second_region_grounds_against_current_image(self, enc):
        content, directives, vlm, cfg = _two_region_setup(
            [(0.0, 0.0, 0.25, 0.25), (0.5, 0.5, 1.0, 1.0)])
        seen = []

        class SpyingSegmenter(BoxFillSegmenter):
            def segment(self, image, box):
                seen.append(image.clone())
                return super().segment(image, box)

        picker = _PaintOptimizer([0.25, 0.75])
        stylize_multi(content, directives, cfg, enc, vlm=vlm,
                      seg=SpyingSegmenter(), region_optimizer=picker)
        assert torch.equal(seen[0], content)
        assert torch.all(seen[1][0:4, 0:4] == 0.25)

    def test_grounding_failure_attribution(self, enc):
        content, directives, vlm, cfg = _two_region_setup(
            [(0.0, 0.0, 0.25, 0.25), (0.5, 0.5, 1.0, 1.0)])
        bad = [directives[0], StyleDirective("not in the transcript")]
        picker = _PaintOptimizer([0.25, 0.75])
        with pytest.raises(MultiRegionError) as info:
            stylize_multi(content, bad, cfg, enc, vlm=vlm,
                          seg=BoxFillSegmenter(), region_optimizer=picker)
        err = info.value
        assert err.region_index == 1
        assert err.stage == "grounding"
        assert len(err.completed) == 1
        assert torch.all(err.partial_image[0:4, 0:4] == 0.25)

    def test_optimization_failure_attribution(self, enc):
        content, directives, vlm, cfg = _two_region_setup(
            [(0.0, 0.0, 0.25, 0.25), (0.5, 0.5, 1.0, 1.0)])
        picker = _PaintOptimizer([0.25, 0.75], fail_at=1)
        with pytest.raises(MultiRegionError) as info:
            stylize_multi(content, directives, cfg, enc, vlm=vlm,
                          seg=BoxFillSegmenter(), region_optimizer=picker)
        assert info.value.region_index == 1
        assert info.value.stage == "optimization"
        assert len(info.value.completed) == 1

    def test_empty_directives(self, enc):
        with pytest.raises(InvalidInputError):
            stylize_multi(small_content(16), [], SMALL, enc,
                          vlm=FixtureVlmBackend([]))

    def test_override_requires_single_directive(self, enc):
        content, directives, vlm, cfg = _two_region_setup(
            [(0.0, 0.0, 0.25, 0.25), (0.5, 0.5, 1.0, 1.0)])
        with pytest.raises(InvalidInputError):
            stylize_multi(content, directives, cfg, enc, vlm=vlm,
                          mask_override=torch.ones(16, 16))


class TestTraceIo:
    def test_round_trip(self, tmp_path, enc):
        result = optimize_region(small_content(), small_task(), SMALL, enc)
        path = tmp_path / "trace.jsonl"
        write_trace(result.loss_trace, path)
        back = read_trace(path)
        assert len(back) == len(result.loss_trace)
        for got, want in zip(back, result.loss_trace):
            assert got == {k: want[k] for k in TRACE_KEYS}

    def test_sidecar_fields(self, tmp_path, enc):
        result = optimize_region(small_content(), small_task(), SMALL, enc)
        path = tmp_path / "sidecar.json"
        write_sidecar(result, SMALL.seed, path, extra={"note": "x"})
        body = json.loads(path.read_text())
        assert body["config_fingerprint"] == SMALL.fingerprint()
        assert body["seed"] == 0
        assert body["style_phrase"] == "cubism"
        assert body["mask_checksum"] == mask_checksum(small_task().mask)
        assert body["box"] == [6, 4, 18, 20]
        assert body["note"] == "x"
