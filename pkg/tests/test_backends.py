import base64
import io
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from least.backends import (
    BoxFillSegmenter,
    FixtureVlmBackend,
    HttpSegmentationBackend,
    HttpVlmBackend,
    image_to_png_base64,
    rle_decode,
    rle_encode,
)
from least.errors import BackendError, InvalidInputError
from least.grounding import StyleDirective, build_vlm_query, ground
from least.imaging import BoundingBox


class TestRle:
    def test_known_pattern(self):
        mask = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        rle = rle_encode(mask)
        assert rle == {"size": [2, 3], "counts": [2, 2, 2]}

    def test_starts_with_foreground(self):
        mask = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        rle = rle_encode(mask)
        assert rle["counts"][0] == 0
        assert torch.equal(rle_decode(rle), mask)

    def test_all_zero_and_all_one(self):
        zero = torch.zeros(4, 5)
        one = torch.ones(4, 5)
        assert rle_encode(zero)["counts"] == [20]
        assert rle_encode(one)["counts"] == [0, 20]
        assert torch.equal(rle_decode(rle_encode(zero)), zero)
        assert torch.equal(rle_decode(rle_encode(one)), one)

    def test_desk_masks_round_trip(self, desk64):
        for fix in desk64:
            assert torch.equal(rle_decode(rle_encode(fix.mask)), fix.mask)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12))
    def test_random_round_trip(self, seed, h, w):
        gen = torch.Generator().manual_seed(seed)
        mask = (torch.rand(h, w, generator=gen) > 0.5).float()
        rle = rle_encode(mask)
        assert sum(rle["counts"]) == h * w
        assert torch.equal(rle_decode(rle), mask)

    @pytest.mark.parametrize("rle", [
        {},
        {"size": [4, 4]},
        {"counts": [16]},
        {"size": [4, 4], "counts": [3]},
        {"size": [4, 4], "counts": [8, 9]},
        {"size": [4], "counts": [16]},
        {"size": [4, 4], "counts": ["a"]},
    ])
    def test_malformed_rejected(self, rle):
        with pytest.raises(BackendError):
            rle_decode(rle)


class TestPngBase64:
    def test_decodes_to_quantized_pixels(self):
        gen = torch.Generator().manual_seed(21)
        img = torch.rand(5, 7, 3, generator=gen)
        data = base64.b64decode(image_to_png_base64(img))
        arr = torch.from_numpy(
            np.array(Image.open(io.BytesIO(data)), copy=True))
        want = (img * 255.0 + 0.5).floor().to(torch.uint8)
        assert torch.equal(arr, want)


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _send_json(self, status, payload):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length))
        with self.server.lock:
            self.server.requests.append((self.path, payload))
        if self.path == "/vlm":
            self._send_json(200, {"text": self.server.vlm_text})
        elif self.path == "/seg":
            self._send_json(200, self.server.seg_payload)
        elif self.path == "/missing-key":
            self._send_json(200, {"unexpected": 1})
        elif self.path == "/not-json":
            self.send_response(200)
            self.send_header("Content-Length", "9")
            self.end_headers()
            self.wfile.write(b"not json!")
        else:
            self._send_json(500, {"error": "boom"})


@pytest.fixture()
def server():
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    httpd.lock = threading.Lock()
    httpd.requests = []
    httpd.vlm_text = "stub reply"
    httpd.seg_payload = {"masks": [], "scores": []}
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    httpd.base = f"http://127.0.0.1:{httpd.server_address[1]}"
    yield httpd
    httpd.shutdown()
    httpd.server_close()


class TestHttpVlm:
    def test_wire_format(self, server):
        server.vlm_text = 'box [0.1, 0.1, 0.6, 0.6] style "mosaic"'
        backend = HttpVlmBackend(server.base + "/vlm")
        img = torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(3))
        reply = backend.query(img, "find the thing")
        assert reply == server.vlm_text

        path, payload = server.requests[0]
        assert path == "/vlm"
        assert payload["prompt"] == "find the thing"
        decoded = Image.open(io.BytesIO(base64.b64decode(payload["image"])))
        assert decoded.size == (8, 8)
        assert decoded.mode == "RGB"

    def test_http_error(self, server):
        backend = HttpVlmBackend(server.base + "/explode")
        with pytest.raises(BackendError):
            backend.query(torch.zeros(4, 4, 3), "p")

    def test_missing_text_key(self, server):
        backend = HttpVlmBackend(server.base + "/missing-key")
        with pytest.raises(BackendError):
            backend.query(torch.zeros(4, 4, 3), "p")

    def test_body_not_json(self, server):
        backend = HttpVlmBackend(server.base + "/not-json")
        with pytest.raises(BackendError):
            backend.query(torch.zeros(4, 4, 3), "p")

    def test_unreachable_endpoint(self):
        backend = HttpVlmBackend("http://127.0.0.1:1/vlm", timeout=0.5)
        with pytest.raises(BackendError):
            backend.query(torch.zeros(4, 4, 3), "p")

    def test_concurrent_queries(self, server):
        backend = HttpVlmBackend(server.base + "/vlm")
        img = torch.zeros(4, 4, 3)
        with ThreadPoolExecutor(max_workers=8) as pool:
            replies = list(pool.map(
                lambda i: backend.query(img, f"p{i}"), range(8)))
        assert replies == ["stub reply"] * 8
        assert len(server.requests) == 8


class TestHttpSegmentation:
    def test_wire_format_and_decode(self, server, disc64):
        server.seg_payload = {
            "masks": [rle_encode(disc64.mask)],
            "scores": [0.97],
        }
        backend = HttpSegmentationBackend(server.base + "/seg")
        masks, scores = backend.segment(disc64.image, disc64.box)
        assert scores == [0.97]
        assert torch.equal(masks[0], disc64.mask)

        path, payload = server.requests[0]
        assert path == "/seg"
        assert payload["box"] == list(disc64.box.as_tuple())

    def test_disc_iou_through_the_wire(self, server, disc64):
        """Analytic disc served as RLE: grounding must recover it nearly
        exactly (IoU by pixel count)."""
        server.vlm_text = disc64.vlm_response
        server.seg_payload = {
            "masks": [rle_encode(disc64.mask)],
            "scores": [0.99],
        }
        task = ground(disc64.image, StyleDirective(disc64.directive),
                      HttpVlmBackend(server.base + "/vlm"),
                      HttpSegmentationBackend(server.base + "/seg"))
        inter = (task.mask * disc64.mask).sum()
        union = ((task.mask + disc64.mask) > 0).float().sum()
        assert inter / union >= 0.9

    def test_malformed_rle_from_server(self, server):
        server.seg_payload = {"masks": [{"size": [4, 4], "counts": [3]}],
                              "scores": [1.0]}
        backend = HttpSegmentationBackend(server.base + "/seg")
        with pytest.raises(BackendError):
            backend.segment(torch.zeros(4, 4, 3), BoundingBox(0, 0, 2, 2))

    def test_http_error(self, server):
        backend = HttpSegmentationBackend(server.base + "/explode")
        with pytest.raises(BackendError):
            backend.segment(torch.zeros(4, 4, 3), BoundingBox(0, 0, 2, 2))


class TestFixtureVlm:
    def test_loads_jsonl_file(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text(json.dumps({"prompt": "p", "response_text": "r"})
                        + "\n\n")
        backend = FixtureVlmBackend(path)
        assert backend.query(torch.zeros(2, 2, 3), "p") == "r"

    def test_replay_order_then_repeat_last(self):
        backend = FixtureVlmBackend([
            {"prompt": "p", "response_text": "first"},
            {"prompt": "p", "response_text": "second"},
        ])
        img = torch.zeros(2, 2, 3)
        assert backend.query(img, "p") == "first"
        assert backend.query(img, "p") == "second"
        assert backend.query(img, "p") == "second"

    def test_unknown_prompt(self):
        backend = FixtureVlmBackend([{"prompt": "p", "response_text": "r"}])
        with pytest.raises(BackendError):
            backend.query(torch.zeros(2, 2, 3), "other")

    def test_bad_record(self):
        with pytest.raises(InvalidInputError):
            FixtureVlmBackend([{"prompt": "p"}])

    def test_desk_transcripts_cover_their_queries(self, tmp_path, desk64):
        from least.synthetic import make_desk_suite
        make_desk_suite(tmp_path, size=64)
        backend = FixtureVlmBackend(tmp_path / "transcripts.jsonl")
        for fix in desk64:
            query = build_vlm_query(StyleDirective(fix.directive))
            assert backend.query(fix.image, query) == fix.vlm_response


class TestBoxFillSegmenter:
    def test_box_interior(self):
        seg = BoxFillSegmenter()
        masks, scores = seg.segment(torch.zeros(8, 10, 3),
                                    BoundingBox(2, 1, 5, 4))
        assert scores == [1.0]
        want = torch.zeros(8, 10)
        want[1:4, 2:5] = 1.0
        assert torch.equal(masks[0], want)

    def test_box_outside_image(self):
        with pytest.raises(InvalidInputError):
            BoxFillSegmenter().segment(torch.zeros(8, 8, 3),
                                       BoundingBox(0, 0, 9, 4))
