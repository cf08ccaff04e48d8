from __future__ import annotations

import contextlib
import time
from pathlib import Path

import numpy as np
import pytest

from dynaset.core import Label
from dynaset.imgproc.raster import RasterImage

REPO = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).resolve().parent / "fixtures"
SAMPLE_VECTORS = REPO / "src" / "dynaset" / "data" / "sample_vectors.txt"
POC_CONFIG = REPO / "configs" / "poc.json"

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Context manager that times a block and records one PASS/FAIL line for it."""

    @contextlib.contextmanager
    def _run(name: str, budget_s: float | None = None):
        start = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            within = budget_s is None or elapsed < budget_s
            status = "PASS" if ok and within else "FAIL"
            limit = "no budget" if budget_s is None else f"budget {budget_s:g}s"
            note = "" if within else " (over budget)"
            _ACCEPTANCE_LINES.append(f"{status}  {name}  [{elapsed:.2f}s, {limit}]{note}")
        assert within, f"{name} took {elapsed:.2f}s, budget {budget_s}s"

    return _run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_image(rng, width=64, height=64) -> RasterImage:
    return RasterImage.from_array(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


def write_vectors(path: Path, vectors: dict[str, list[float]]) -> Path:
    dim = len(next(iter(vectors.values())))
    lines = [f"{len(vectors)} {dim}"]
    lines += [tok + " " + " ".join(repr(float(x)) for x in v) for tok, v in vectors.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def lion():
    return Label("lion")


@pytest.fixture(scope="session")
def poc_dataset(tmp_path_factory):
    """The bundled example config formulated once through the CLI: (exit code, output dir)."""
    from dynaset.cli import main

    out = tmp_path_factory.mktemp("poc") / "dataset"
    code = main(["formulate", "--config", str(POC_CONFIG), "--out", str(out)])
    return code, out
