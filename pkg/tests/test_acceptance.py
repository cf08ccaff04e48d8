"""Exit criteria, one test each, run at the stated tolerance and time budget.

Every test records a PASS/FAIL line (with its wall time) that pytest prints in
an "acceptance criteria" section at the end of the run.
"""

import math

import numpy as np
import pytest

from dynaset.core import DEFAULT_MANIFEST_NAME, Label, load_config, read_manifest
from dynaset.embeddings import WordVectorStore
from dynaset.genclient import GenRequest, MockBackend
from dynaset.imgproc.noise import NoiseSpec, apply_noise, default_blur_sigma, gaussian_kernel
from dynaset.imgproc.raster import RasterImage
from dynaset.llm import FixtureLlm
from dynaset.metrics import C1, audit, class_ssim, colorfulness, ssim
from dynaset.pipeline import formulate
from dynaset.prompt import (
    Animacy,
    AnimacyLexicon,
    EmptyResponse,
    build_llm_query,
    caption_replace,
    classify_animacy,
    diversify,
    naive_prompt,
    parse_llm_response,
)

from conftest import FIXTURES, POC_CONFIG, random_image
from oracles import binomial_sd, naive_ssim

pytestmark = pytest.mark.acceptance


def test_ssim_suite(criterion):
    with criterion("SSIM suite", 10):
        rng = np.random.default_rng(101)
        for _ in range(20):
            img = random_image(rng, 64, 64)
            assert abs(ssim(img, img) - 1.0) <= 1e-9

        black = RasterImage.filled(224, 224, (0, 0, 0))
        white = RasterImage.filled(224, 224, (255, 255, 255))
        closed_form = C1 / (255**2 + C1)
        assert abs(ssim(black, white) - closed_form) <= 1e-7
        assert abs(closed_form - 9.999e-5) <= 1e-7

        for _ in range(10):
            a, b = random_image(rng, 64, 64), random_image(rng, 64, 64)
            ab = ssim(a, b)
            assert abs(ab - naive_ssim(a.pixels, b.pixels)) <= 1e-6
            assert abs(ab - ssim(b, a)) <= 1e-12


def test_colorfulness_suite(criterion):
    with criterion("Colorfulness suite", 5):
        rng = np.random.default_rng(202)
        for _ in range(10):
            g = rng.integers(0, 256, size=(224, 224), dtype=np.uint8)
            assert colorfulness(RasterImage.from_array(np.stack([g, g, g], axis=-1))) == 0.0

        red = RasterImage.filled(224, 224, (255, 0, 0))
        assert abs(colorfulness(red) - 85.529) <= 1e-3

        board = np.zeros((2, 2, 3), np.uint8)
        board[0, 0] = board[1, 1] = (255, 0, 0)
        board[0, 1] = board[1, 0] = (0, 255, 0)
        assert abs(colorfulness(RasterImage.from_array(board), resize_to=None) - 293.25) <= 1e-6

        for _ in range(5):
            img = random_image(rng, 224, 224)
            flat = img.pixels.reshape(-1, 3)
            shuffled = RasterImage.from_array(flat[rng.permutation(len(flat))].reshape(img.pixels.shape))
            assert colorfulness(shuffled) == colorfulness(img)


def test_noise_suite(criterion):
    with criterion("Noise suite", 30):
        rng = np.random.default_rng(303)
        img = random_image(rng, 256, 192)
        assert apply_noise(img, NoiseSpec("salt", amount=0.0, seed=1)) == img
        assert np.all(apply_noise(img, NoiseSpec("salt", amount=1.0, seed=1)).pixels == 255)

        gray = RasterImage.filled(1024, 1024, (128, 128, 128))
        salted = apply_noise(gray, NoiseSpec("salt", amount=0.05, seed=2))
        frac = np.all(salted.pixels == 255, axis=-1).mean()
        assert abs(frac - 0.05) <= 6 * binomial_sd(1024 * 1024, 0.05)
        assert 0.045 <= frac <= 0.055

        spec = NoiseSpec("gaussian", mean=0.0, variance=0.01, seed=3)
        d = apply_noise(gray, spec).to_unit_float() - gray.to_unit_float()
        n = d.size
        assert abs(d.mean() - spec.mean) <= 3 * math.sqrt(spec.variance / n)
        assert abs(d.var() - spec.variance) <= 3 * spec.variance * math.sqrt(2 / (n - 1))

        assert abs(gaussian_kernel(5, default_blur_sigma(5)).sum() - 1.0) <= 1e-12
        for level in (0, 37, 128, 255):
            const = RasterImage.filled(300, 200, (level, 255 - level, level // 3))
            assert apply_noise(const, NoiseSpec("blur")) == const

        for seed in (0, 7, 2**64 - 1):
            sp = apply_noise(img, NoiseSpec("s&p", amount=0.3, salt_fraction=1.0, seed=seed))
            assert sp == apply_noise(img, NoiseSpec("salt", amount=0.3, seed=seed))

        for kind in ("blur", "gaussian", "localvar", "poisson", "salt", "pepper", "s&p", "speckle"):
            spec = NoiseSpec(kind, seed=12345)
            assert apply_noise(img, spec).pixels.tobytes() == apply_noise(img, spec).pixels.tobytes()


def _algorithm_store(scale=1.0):
    vectors = {
        "animate": [1.0, 0.1, 0.0, 0.0],
        "animal": [1.0, 0.0, 0.0, 0.0],
        "plant": [0.9, 0.0, 0.3, 0.0],
        "inanimate": [0.1, 1.0, 0.0, 0.0],
        "object": [0.0, 1.0, 0.0, 0.0],
        "man-made": [0.0, 0.9, 0.3, 0.0],
        "lion": [1.0, 0.0, 0.0, 0.0],  # the "animal" vector
        "cup": [0.0, 1.0, 0.0, 0.0],  # the "object" vector
        "thing": [0.0, 0.0, 0.0, 1.0],  # orthogonal to every lexicon word: exact tie
    }
    return WordVectorStore(4, {k: np.array(v) * scale for k, v in vectors.items()})


def test_animacy_diversification_suite(criterion):
    with criterion("Animacy classification and diversification suite", 1):
        lex = AnimacyLexicon()
        store = _algorithm_store()
        lion, cup, thing = Label("lion"), Label("cup"), Label("thing")
        assert classify_animacy(store, lex, lion) is Animacy.LIVING
        assert diversify(store, lex, lion).texts == ["female lion", "young lion", "sick lion"]
        assert classify_animacy(store, lex, cup) is Animacy.NONLIVING
        assert classify_animacy(store, lex, thing) is Animacy.NONLIVING
        scaled = _algorithm_store(10.0)
        for label in (lion, cup, thing):
            assert classify_animacy(scaled, lex, label) is classify_animacy(store, lex, label)
        # the same holds for the whole store scaled after loading
        for label in (lion, cup, thing):
            assert classify_animacy(store.scaled(10.0), lex, label) is classify_animacy(store, lex, label)


def test_pipeline_suite(criterion, tmp_path):
    with criterion("Pipeline suite", 120):
        cfg = load_config(POC_CONFIG)
        assert (len(cfg.labels), cfg.prompts_per_class, cfg.images_per_prompt) == (2, 10, 18)
        assert cfg.backend == "mock"

        m1 = formulate(cfg, tmp_path / "run1")
        assert len(m1.entries) == 360
        assert [len(c.images) for c in m1.classes] == [180, 180]
        files = sorted(p.relative_to(tmp_path / "run1").as_posix() for p in (tmp_path / "run1").rglob("*.png"))
        assert files == sorted(e.path for e in m1.entries)

        m2 = formulate(cfg, tmp_path / "run2")
        for rel in files:
            assert (tmp_path / "run1" / rel).read_bytes() == (tmp_path / "run2" / rel).read_bytes()
        assert m1.classes == m2.classes and m1.generator == m2.generator and m1.image_size == m2.image_size

        assert read_manifest(tmp_path / "run1" / DEFAULT_MANIFEST_NAME) == m1

        report = audit(tmp_path / "run1", manifest=m1)
        assert {k: v.pair_count for k, v in report.per_class.items()} == {"yorkshire-terrier": 16110, "Bengal": 16110}


def test_prompt_suite(criterion):
    with criterion("Prompt suite"):
        assert naive_prompt(Label("yorkshire-terrier", "pet")).text == "a photo of one yorkshire-terrier pet"
        assert naive_prompt(Label("Bengal")).text == "a photo of one Bengal"
        assert naive_prompt(Label("boxer", "pet")).text == "a photo of one boxer pet"

        assert build_llm_query(Label("airplanes")) == (
            "Can you recommend 10 simple prompts for image creation? "
            "I want to generate photo-realistic airplanes images with txt2img model"
        )

        assert (
            caption_replace("a dog sitting on grass", ["dog", "cat"], Label("yorkshire-terrier")).text
            == "a yorkshire-terrier sitting on grass"
        )

        llm_dir = FIXTURES / "llm"
        numbered = parse_llm_response((llm_dir / "numbered.txt").read_text(encoding="utf-8"), Label("airplanes"), 10)
        assert len(numbered) == 10
        dashed = parse_llm_response((llm_dir / "dashed.txt").read_text(encoding="utf-8"), Label("lion"), 10)
        assert len(dashed) == 3
        quoted = parse_llm_response((llm_dir / "preamble_quoted.txt").read_text(encoding="utf-8"), Label("yorkshire-terrier"), 10)
        assert len(quoted) == 10 and not any('"' in t for t in quoted.texts)
        with pytest.raises(EmptyResponse):
            parse_llm_response((llm_dir / "refusal.txt").read_text(encoding="utf-8"), Label("lion"), 10)


def _class_mean_ssim(prompts, seeds):
    mock = MockBackend()
    images = [mock.generate(GenRequest(p, 768, 768, seed=s, index=i)) for i, (p, s) in enumerate(zip(prompts, seeds))]
    return class_ssim(images, resize_to=224).mean


def test_directional_diversity(criterion):
    with criterion("Directional diversity check"):
        label = Label("Bengal", "pet")
        llm = FixtureLlm.from_file(POC_CONFIG.parent / "llm_responses.json")
        distinct = list(parse_llm_response(llm.complete(build_llm_query(label)), label, 10))
        assert len(distinct) == 10
        for trial in range(5):
            seeds = [int(s) for s in np.random.default_rng(trial).integers(0, 2**63, size=20)]
            varied = _class_mean_ssim([distinct[k // 2] for k in range(20)], seeds)
            repeated = _class_mean_ssim([distinct[0]] * 20, seeds)
            assert varied < repeated, (trial, varied, repeated)
