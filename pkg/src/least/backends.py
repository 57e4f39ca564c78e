"""Backend clients for grounding.

Two backend roles exist, both defined by small wire contracts so tests can run
on recorded fixtures and stubs:

* VLM backend: request ``{"image": <base64 PNG>, "prompt": <string>}``,
  response ``{"text": <string>}``.
* Segmentation backend: request ``{"image": <base64 PNG>,
  "box": [x0, y0, x1, y1]}`` (pixel coordinates), response
  ``{"masks": [<RLE>], "scores": [<float>]}``.

Masks travel run-length encoded: ``{"size": [H, W], "counts": [...]}`` where
``counts`` are alternating run lengths over the row-major flattened mask,
starting with the count of leading zeros (possibly 0).
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path
from typing import Protocol

import numpy as np
import requests
import torch
from PIL import Image

from .errors import BackendError, InvalidInputError
from .imaging import BinaryMask, BoundingBox, ImageTensor, check_box_within


class VlmBackend(Protocol):
    def query(self, image: ImageTensor, prompt: str) -> str: ...


class SegmentationBackend(Protocol):
    def segment(self, image: ImageTensor, box: BoundingBox
                ) -> tuple[list[BinaryMask], list[float]]: ...


def image_to_png_base64(img: ImageTensor) -> str:
    """Encode an image as base64 PNG bytes (same quantization as save_image)."""
    arr = (img.detach().clamp(0.0, 1.0) * 255.0 + 0.5).floor()
    arr = arr.to(torch.uint8).cpu().numpy()
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def rle_encode(mask: BinaryMask) -> dict:
    """Run-length encode a binary mask (row-major, leading run counts zeros)."""
    arr = (mask.detach().cpu().numpy() > 0.5).astype(np.uint8).ravel()
    h, w = mask.shape
    if arr.size == 0:
        return {"size": [int(h), int(w)], "counts": []}
    change = np.flatnonzero(np.diff(arr)) + 1
    bounds = np.concatenate(([0], change, [arr.size]))
    counts = np.diff(bounds).tolist()
    if arr[0] == 1:
        counts = [0] + counts
    return {"size": [int(h), int(w)], "counts": counts}


def rle_decode(rle: dict) -> BinaryMask:
    """Inverse of :func:`rle_encode`."""
    try:
        h, w = int(rle["size"][0]), int(rle["size"][1])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise BackendError(f"malformed RLE mask: {exc}") from exc
    if sum(counts) != h * w:
        raise BackendError(
            f"RLE counts sum to {sum(counts)}, expected {h * w}"
        )
    flat = np.zeros(h * w, dtype=np.float32)
    pos = 0
    value = 0.0
    for run in counts:
        if value == 1.0:
            flat[pos:pos + run] = 1.0
        pos += run
        value = 1.0 - value
    return torch.from_numpy(flat.reshape(h, w))


class HttpVlmBackend:
    """JSON-over-HTTP VLM client."""

    def __init__(self, endpoint: str, timeout: float = 120.0, session=None):
        self.endpoint = endpoint
        self.timeout = timeout
        # requests module functions are thread-safe; a shared Session is not,
        # so one is only used when the caller injects it.
        self._http = session or requests

    def query(self, image: ImageTensor, prompt: str) -> str:
        payload = {"image": image_to_png_base64(image), "prompt": prompt}
        try:
            resp = self._http.post(self.endpoint, json=payload,
                                   timeout=self.timeout)
            resp.raise_for_status()
            return str(resp.json()["text"])
        except (requests.RequestException, ValueError, KeyError) as exc:
            raise BackendError(f"VLM backend failed: {exc}") from exc


class HttpSegmentationBackend:
    """JSON-over-HTTP segmentation client (box-prompted)."""

    def __init__(self, endpoint: str, timeout: float = 120.0, session=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self._http = session or requests

    def segment(self, image: ImageTensor, box: BoundingBox):
        payload = {
            "image": image_to_png_base64(image),
            "box": list(box.as_tuple()),
        }
        try:
            resp = self._http.post(self.endpoint, json=payload,
                                   timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
            masks = [rle_decode(m) for m in body["masks"]]
            scores = [float(s) for s in body["scores"]]
        except (requests.RequestException, ValueError, KeyError,
                TypeError) as exc:
            raise BackendError(f"segmentation backend failed: {exc}") from exc
        return masks, scores


class FixtureVlmBackend:
    """Replay VLM responses from a JSONL transcript.

    Each line is ``{"prompt": ..., "response_text": ...}``. Responses for a
    repeated prompt are replayed in file order; once exhausted the last one
    repeats, so single-entry fixtures survive retries.
    """

    def __init__(self, source):
        if isinstance(source, (str, Path)):
            lines = Path(source).read_text().splitlines()
            records = [json.loads(ln) for ln in lines if ln.strip()]
        else:
            records = list(source)
        self._responses: dict[str, list[str]] = {}
        for rec in records:
            try:
                self._responses.setdefault(
                    rec["prompt"], []).append(rec["response_text"])
            except (KeyError, TypeError) as exc:
                raise InvalidInputError(
                    f"bad transcript record {rec!r}: {exc}") from exc
        self._cursor: dict[str, int] = {}

    def query(self, image: ImageTensor, prompt: str) -> str:
        if prompt not in self._responses:
            raise BackendError(
                f"no transcript entry for prompt ({len(self._responses)} "
                f"prompts recorded): {prompt!r}"
            )
        replies = self._responses[prompt]
        i = self._cursor.get(prompt, 0)
        self._cursor[prompt] = i + 1
        return replies[min(i, len(replies) - 1)]


class BoxFillSegmenter:
    """Offline fallback segmenter: the mask is the box interior, score 1."""

    def segment(self, image: ImageTensor, box: BoundingBox):
        check_box_within(box, image.shape[0], image.shape[1])
        mask = torch.zeros(image.shape[0], image.shape[1],
                           dtype=torch.float32)
        mask[box.y0:box.y1, box.x0:box.x1] = 1.0
        return [mask], [1.0]
