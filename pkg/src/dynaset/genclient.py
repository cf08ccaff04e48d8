"""Text-to-image backends.

``MockBackend`` renders a deterministic procedural texture so the whole
pipeline runs offline; ``HttpBackend`` talks to a txt2img REST server.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import logging
import os
import socket
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from dynaset.core import U64_MAX, Prompt, hash64
from dynaset.imgproc import rng
from dynaset.imgproc.raster import RasterImage

log = logging.getLogger(__name__)


class GenerationError(Exception):
    kind = "generation"
    retryable = False

    def __init__(self, message: str, *, retryable: bool | None = None):
        super().__init__(message)
        if retryable is not None:
            self.retryable = retryable


class ConnectionFailed(GenerationError):
    kind = "connection"
    retryable = True


class HttpStatusError(GenerationError):
    kind = "http_status"
    retryable = True

    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(message or f"backend returned HTTP {status}")


class MalformedPayload(GenerationError):
    kind = "malformed_payload"
    retryable = False


class GenerationTimeout(GenerationError):
    kind = "timeout"
    retryable = True


@dataclass(frozen=True)
class GenRequest:
    prompt: Prompt
    width: int = 768
    height: int = 768
    seed: int = 0
    index: int = 0

    def __post_init__(self) -> None:
        for name in ("width", "height"):
            v = getattr(self, name)
            if v < 64 or v % 8:
                raise ValueError(f"{name} must be ≥ 64 and a multiple of 8, got {v}")
        if not 0 <= self.seed <= U64_MAX:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.index < 0:
            raise ValueError("index must be non-negative")


class Backend(Protocol):
    name: str

    def generate(self, req: GenRequest) -> RasterImage: ...


# --- mock -----------------------------------------------------------------


def value_noise(key: int, stream: int, cells: int, height: int, width: int) -> np.ndarray:
    """Smoothstep-interpolated lattice noise in [0, 1] with ``cells`` cells per side."""
    n = cells + 1
    lattice = rng.uniform(key, stream, np.arange(n * n, dtype=np.uint64)).reshape(n, n)
    lattice = lattice.astype(np.float32)

    def axis(length):
        pos = (np.arange(length, dtype=np.float64) + 0.5) * (cells / length)
        i0 = np.floor(pos).astype(np.intp)
        t = (pos - i0).astype(np.float32)
        return i0, t * t * (np.float32(3.0) - np.float32(2.0) * t)

    x0, fx = axis(width)
    y0, fy = axis(height)
    rows = lattice[:, x0] * (1 - fx) + lattice[:, x0 + 1] * fx
    return rows[y0] * (1 - fy)[:, None] + rows[y0 + 1] * fy[:, None]


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    h6 = (h - np.floor(h)) * 6
    out = np.empty(h.shape + (3,), dtype=h.dtype)
    for c, n in enumerate((5, 3, 1)):
        k = h6 + n
        k[k >= 6] -= 6
        f = np.minimum(k, 4 - k)
        np.clip(f, 0, 1, out=f)
        out[..., c] = v * (1 - s * f)
    return out


class MockBackend:
    """Deterministic procedural stand-in for a diffusion model.

    Coarse layout and base hue are keyed by the prompt text alone, so images
    of one prompt share a composition the way real txt2img samples do; the
    finer octaves, saturation, and a hue offset are keyed by
    hash64(prompt text, seed, index).
    """

    name = "mock"

    def generate(self, req: GenRequest) -> RasterImage:
        h, w = req.height, req.width
        pk = hash64("mock/prompt", req.prompt.text)
        sk = hash64("mock/sample", req.prompt.text, req.seed, req.index)

        layout = 0.6 * value_noise(pk, 0, 2, h, w) + 0.4 * value_noise(pk, 1, 4, h, w)
        detail = (
            0.45 * value_noise(sk, 0, 4, h, w)
            + 0.25 * value_noise(sk, 1, 8, h, w)
            + 0.18 * value_noise(sk, 2, 16, h, w)
            + 0.12 * value_noise(sk, 3, 32, h, w)
        )
        # Python floats keep the float32 fields from promoting to float64.
        base_hue, hue_jitter, sat_base = map(float, rng.uniform(pk, 100, np.arange(3, dtype=np.uint64)))
        sample_hue = float(rng.uniform(sk, 100, np.zeros(1, dtype=np.uint64))[0])

        value = 0.12 + 0.83 * (0.55 * layout + 0.45 * detail)
        hue = base_hue + 0.12 * (sample_hue - 0.5) + 0.25 * hue_jitter * (layout - 0.5)
        sat = 0.2 + 0.35 * sat_base + 0.4 * value_noise(sk, 4, 2, h, w)
        rgb = _hsv_to_rgb(hue, np.clip(sat, 0.0, 1.0), np.clip(value, 0.0, 1.0))
        return RasterImage.from_unit_float(rgb)


# --- http -----------------------------------------------------------------


def _decode_image(payload: bytes) -> RasterImage:
    try:
        data = json.loads(payload)
    except ValueError as exc:
        raise MalformedPayload(f"response is not JSON: {exc}") from exc
    b64 = None
    if isinstance(data, dict):
        if isinstance(data.get("image"), str):
            b64 = data["image"]
        elif isinstance(data.get("images"), list) and data["images"]:
            b64 = data["images"][0]
        elif isinstance(data.get("data"), list) and data["data"] and isinstance(data["data"][0], dict):
            b64 = data["data"][0].get("b64_json")
    if not isinstance(b64, str):
        raise MalformedPayload("response carries no base64 image ('image', 'images' or 'data[0].b64_json')")
    if b64.startswith("data:") and "," in b64:
        b64 = b64.split(",", 1)[1]
    try:
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (binascii.Error, UnidentifiedImageError, OSError, ValueError) as exc:
        raise MalformedPayload(f"could not decode image: {exc}") from exc
    return RasterImage.from_array(arr)


class HttpBackend:
    """POSTs ``{prompt, width, height, seed, **extra}`` and expects a base64 PNG back.

    Retryable failures (connection, timeout, non-2xx) are retried up to
    ``attempts`` times in total with exponential backoff.
    """

    name = "http"

    def __init__(
        self,
        endpoint: str,
        token_env: str = "DYNASET_API_TOKEN",
        timeout: float = 300.0,
        extra: Mapping | None = None,
        attempts: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.token_env = token_env
        self.timeout = timeout
        self.extra = dict(extra or {})
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep

    def _post(self, req: GenRequest) -> bytes:
        body = {
            **self.extra,
            "prompt": req.prompt.text,
            "width": req.width,
            "height": req.height,
            "seed": req.seed,
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        request = urllib.request.Request(
            self.endpoint, data=json.dumps(body).encode("utf-8"), headers=headers, method="POST"
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            raise HttpStatusError(exc.code) from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise GenerationTimeout(f"request timed out after {self.timeout}s") from exc
            raise ConnectionFailed(f"cannot reach {self.endpoint}: {exc.reason}") from exc
        except (socket.timeout, TimeoutError) as exc:
            raise GenerationTimeout(f"request timed out after {self.timeout}s") from exc
        except (ConnectionError, OSError) as exc:
            raise ConnectionFailed(f"connection to {self.endpoint} failed: {exc}") from exc

    def generate_once(self, req: GenRequest) -> RasterImage:
        img = _decode_image(self._post(req))
        if img.size != (req.width, req.height):
            raise MalformedPayload(
                f"backend returned {img.width}x{img.height}, requested {req.width}x{req.height}"
            )
        return img

    def generate(self, req: GenRequest) -> RasterImage:
        for attempt in range(self.attempts):
            try:
                return self.generate_once(req)
            except GenerationError as exc:
                if not exc.retryable or attempt == self.attempts - 1:
                    raise
                delay = self.backoff * (2 ** attempt)
                log.warning("%s (attempt %d/%d), retrying in %.1fs", exc, attempt + 1, self.attempts, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")  # pragma: no cover


# --- batch ----------------------------------------------------------------

BatchResult = Union[RasterImage, GenerationError]


def _safe_generate(backend: Backend, req: GenRequest) -> BatchResult:
    try:
        return backend.generate(req)
    except GenerationError as exc:
        return exc
    except Exception as exc:  # a backend bug must not take down the batch
        err = GenerationError(f"{type(exc).__name__}: {exc}")
        err.kind = "internal"
        return err


def generate_batch(
    backend: Backend, reqs: Sequence[GenRequest], max_in_flight: int = 2
) -> list[tuple[GenRequest, BatchResult]]:
    """Generate every request, at most ``max_in_flight`` at a time, results in input order."""
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be ≥ 1")
    if not reqs:
        return []
    if max_in_flight == 1:
        return [(r, _safe_generate(backend, r)) for r in reqs]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        results = list(pool.map(lambda r: _safe_generate(backend, r), reqs))
    return list(zip(reqs, results))


def make_backend(kind: str, http_settings=None) -> Backend:
    if kind == "mock":
        return MockBackend()
    if kind == "http":
        s = http_settings
        if s is None or not s.endpoint:
            raise ValueError("http backend requires an endpoint")
        return HttpBackend(s.endpoint, token_env=s.token_env, timeout=s.timeout, extra=s.extra)
    raise ValueError(f"unknown backend {kind!r}")
