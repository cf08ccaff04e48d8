import base64
import io
import json
import threading
import time

import numpy as np
import pytest
from PIL import Image

from dynaset.core import Label, Prompt, PromptSource
from dynaset.genclient import (
    ConnectionFailed,
    GenerationError,
    GenerationTimeout,
    GenRequest,
    HttpBackend,
    HttpStatusError,
    MalformedPayload,
    MockBackend,
    generate_batch,
    make_backend,
)
from dynaset.imgproc.raster import RasterImage

from stub_server import serve

LION = Label("lion")


def _req(text="a photo of one lion", size=64, seed=0, index=0):
    return GenRequest(Prompt(text, LION, PromptSource.NAIVE), size, size, seed, index)


def _png_b64(w, h, color=(10, 20, 30)):
    buf = io.BytesIO()
    Image.new("RGB", (w, h), color).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


# --- requests ---


@pytest.mark.parametrize("w,h", [(63, 64), (64, 60), (100, 64), (0, 64)])
def test_request_size_invariant(w, h):
    with pytest.raises(ValueError):
        GenRequest(Prompt("lion", LION, "naive"), w, h)


def test_request_defaults():
    r = GenRequest(Prompt("lion", LION, "naive"))
    assert (r.width, r.height, r.seed, r.index) == (768, 768, 0, 0)


# --- mock backend ---


def test_mock_is_deterministic_at_full_size():
    mock = MockBackend()
    a = mock.generate(_req(size=768, seed=12345))
    b = mock.generate(_req(size=768, seed=12345))
    assert a == b
    assert a.size == (768, 768)


def test_mock_honours_requested_size():
    img = MockBackend().generate(GenRequest(Prompt("lion", LION, "naive"), 128, 64))
    assert img.size == (128, 64)


def test_mock_index_changes_at_least_one_percent_of_pixels():
    mock = MockBackend()
    fractions = []
    for key in range(100):
        a = mock.generate(_req(f"a photo of one lion {key}", size=256, seed=key, index=0))
        b = mock.generate(_req(f"a photo of one lion {key}", size=256, seed=key, index=1))
        fractions.append(np.any(a.pixels != b.pixels, axis=-1).mean())
    assert min(fractions) >= 0.01


def test_mock_seed_and_prompt_change_output():
    mock = MockBackend()
    base = mock.generate(_req(seed=1))
    assert mock.generate(_req(seed=2)) != base
    assert mock.generate(_req("a lion at dusk", seed=1)) != base


def test_mock_output_has_colour_and_texture():
    img = MockBackend().generate(_req(size=256, seed=3)).pixels.astype(float)
    assert img.std() > 5
    assert np.abs(img[..., 0] - img[..., 1]).mean() > 1


# --- HTTP backend ---


def _no_sleep(_):
    pass


def test_http_success_and_request_body(monkeypatch):
    monkeypatch.setenv("TEST_IMG_TOKEN", "tok")
    reply = json.dumps({"images": [_png_b64(64, 64)]}).encode()
    with serve(lambda body, headers: (200, reply)) as (url, seen):
        backend = HttpBackend(url, token_env="TEST_IMG_TOKEN", timeout=5, extra={"steps": 30}, sleep=_no_sleep)
        img = backend.generate(_req(seed=77))
    assert img.size == (64, 64)
    assert np.all(img.pixels == np.array([10, 20, 30], np.uint8))
    body, headers = seen[0]
    assert body == {"steps": 30, "prompt": "a photo of one lion", "width": 64, "height": 64, "seed": 77}
    assert headers["Authorization"] == "Bearer tok"


@pytest.mark.parametrize(
    "payload",
    [
        {"image": _png_b64(64, 64)},
        {"images": ["data:image/png;base64," + _png_b64(64, 64)]},
        {"data": [{"b64_json": _png_b64(64, 64)}]},
    ],
)
def test_http_accepts_common_payload_shapes(payload):
    with serve(lambda body, headers: (200, json.dumps(payload).encode())) as (url, _):
        assert HttpBackend(url, timeout=5, sleep=_no_sleep).generate(_req()).size == (64, 64)


def test_http_500_is_retryable_status_error():
    with serve(lambda body, headers: (500, b"{}")) as (url, seen):
        with pytest.raises(HttpStatusError) as info:
            HttpBackend(url, timeout=5, sleep=_no_sleep).generate(_req())
    assert info.value.status == 500
    assert info.value.retryable is True
    assert len(seen) == 3  # three attempts in total


@pytest.mark.parametrize(
    "reply",
    [b"not json", b'{"images": []}', b'{"image": "!!!notbase64"}', json.dumps({"image": _png_b64(32, 32)}).encode()],
)
def test_http_malformed_payload_is_not_retried(reply):
    with serve(lambda body, headers: (200, reply)) as (url, seen):
        with pytest.raises(MalformedPayload) as info:
            HttpBackend(url, timeout=5, sleep=_no_sleep).generate(_req())
    assert info.value.retryable is False
    assert len(seen) == 1


def test_http_timeout_is_retryable():
    def slow(body, headers):
        time.sleep(0.5)
        return 200, b"{}"

    with serve(slow) as (url, _):
        with pytest.raises(GenerationTimeout) as info:
            HttpBackend(url, timeout=0.1, attempts=1).generate(_req())
    assert info.value.retryable is True


def test_http_connection_failure_is_retryable():
    with serve(lambda b, h: (200, b"{}")) as (url, _):
        pass  # server now closed; port refuses connections
    with pytest.raises(ConnectionFailed) as info:
        HttpBackend(url, timeout=2, attempts=1).generate(_req())
    assert info.value.retryable is True


def test_http_retry_backoff_then_success():
    calls = []
    good = json.dumps({"image": _png_b64(64, 64)}).encode()

    def flaky(body, headers):
        calls.append(1)
        return (503, b"{}") if len(calls) < 3 else (200, good)

    sleeps = []
    with serve(flaky) as (url, _):
        img = HttpBackend(url, timeout=5, sleep=sleeps.append).generate(_req())
    assert img.size == (64, 64)
    assert sleeps == [0.5, 1.0]


def test_make_backend():
    assert isinstance(make_backend("mock"), MockBackend)
    with pytest.raises(ValueError):
        make_backend("http")
    with pytest.raises(ValueError):
        make_backend("dalle")


# --- batches ---


class _CountingBackend:
    name = "counting"

    def __init__(self, fail_indices=(), delay=0.002):
        self.fail = set(fail_indices)
        self.delay = delay
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def generate(self, req):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        try:
            time.sleep(self.delay)
            if req.index in self.fail:
                raise HttpStatusError(502)
            return RasterImage.filled(req.width, req.height, (req.index % 256, 0, 0))
        finally:
            with self.lock:
                self.active -= 1


def test_batch_empty():
    assert generate_batch(MockBackend(), [], 4) == []


def test_batch_180_mock_requests_in_order():
    reqs = [_req(seed=i, index=i) for i in range(180)]
    out = generate_batch(MockBackend(), reqs, max_in_flight=8)
    assert len(out) == 180
    assert [r for r, _ in out] == reqs
    mock = MockBackend()
    for r, img in out[::30]:
        assert img == mock.generate(r)


def test_batch_respects_max_in_flight():
    backend = _CountingBackend(delay=0.01)
    out = generate_batch(backend, [_req(index=i) for i in range(40)], max_in_flight=3)
    assert backend.peak <= 3
    assert [img.pixels[0, 0, 0] for _, img in out] == list(range(40))


def test_batch_isolates_failures():
    out = generate_batch(_CountingBackend(fail_indices={1}), [_req(index=i) for i in range(3)], 2)
    kinds = [type(res) for _, res in out]
    assert kinds == [RasterImage, HttpStatusError, RasterImage]


def test_batch_wraps_unexpected_exceptions():
    class Broken:
        name = "broken"

        def generate(self, req):
            raise ZeroDivisionError("boom")

    (_, res), = generate_batch(Broken(), [_req()], 1)
    assert isinstance(res, GenerationError)
    assert res.kind == "internal"
