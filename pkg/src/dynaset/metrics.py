"""Dataset diversity metrics: pairwise SSIM per class and per-image colorfulness.

SSIM follows Wang et al. (2004): 8-bit BT.601 luma, an 11x11 Gaussian window
with sigma 1.5, K1=0.01, K2=0.03, valid-region filtering, mean over windows.
Colorfulness is the Hasler-Süsstrunk opponent-channel measure.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.ndimage import correlate1d

from dynaset.core import DatasetManifest
from dynaset.imgproc.raster import IMAGE_SUFFIXES, RasterImage, read_image, resize

log = logging.getLogger(__name__)

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2


class AuditError(RuntimeError):
    pass


def ssim_window_1d(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


_WINDOW = ssim_window_1d()


def luma(img: RasterImage) -> np.ndarray:
    """ITU-R BT.601 luma, rounded to 8-bit levels, as float64."""
    px = img.pixels.astype(np.float64)
    y = 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]
    return np.rint(y)


def _filter_valid(a: np.ndarray) -> np.ndarray:
    """Gaussian-window filter over the last two axes, keeping only full windows."""
    r = WINDOW_SIZE // 2
    out = correlate1d(a, _WINDOW, axis=-2, mode="constant")[..., r:-r, :]
    out = correlate1d(out, _WINDOW, axis=-1, mode="constant")[..., :, r:-r]
    return out


@dataclass
class _Moments:
    y: np.ndarray
    mu: np.ndarray
    var: np.ndarray


def _moments(img: RasterImage) -> _Moments:
    if img.width < WINDOW_SIZE or img.height < WINDOW_SIZE:
        raise ValueError(
            f"image {img.width}x{img.height} is smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} SSIM window"
        )
    y = luma(img)
    mu = _filter_valid(y)
    var = _filter_valid(y * y) - mu * mu
    return _Moments(y, mu, var)


def _ssim_from_moments(a: _Moments, b_y, b_mu, b_var) -> np.ndarray:
    # b_* may carry a leading batch axis.
    cov = _filter_valid(a.y * b_y) - a.mu * b_mu
    num = (2 * a.mu * b_mu + C1) * (2 * cov + C2)
    den = (a.mu * a.mu + b_mu * b_mu + C1) * (a.var + b_var + C2)
    return (num / den).mean(axis=(-2, -1))


def ssim(a: RasterImage, b: RasterImage) -> float:
    """Mean SSIM between two equally sized images."""
    if a.size != b.size:
        raise ValueError(f"image sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    ma, mb = _moments(a), _moments(b)
    return float(_ssim_from_moments(ma, mb.y, mb.mu, mb.var))


@numba.njit(cache=True, boundscheck=False)
def _ssim_against(ya, mua, vara, ys, mus, vars_, js, g, c1, c2, out):  # pragma: no cover - jitted
    # Fused per-pair kernel: filter(ya*yb) vertically then horizontally, then
    # the SSIM map, one output row at a time. Inner loops run over contiguous
    # columns so they vectorize without reassociating any sum.
    k_len = g.shape[0]
    h, w = ya.shape
    ho = h - k_len + 1
    wo = w - k_len + 1
    prod = np.empty((h, w))
    acc = np.empty(w)
    cov = np.empty(wo)
    for n in range(js.shape[0]):
        b = js[n]
        yb = ys[b]
        for r in range(h):
            for c in range(w):
                prod[r, c] = ya[r, c] * yb[r, c]
        total = 0.0
        for r in range(ho):
            for c in range(w):
                acc[c] = 0.0
            for k in range(k_len):
                gk = g[k]
                for c in range(w):
                    acc[c] += gk * prod[r + k, c]
            for c in range(wo):
                cov[c] = 0.0
            for k in range(k_len):
                gk = g[k]
                for c in range(wo):
                    cov[c] += gk * acc[c + k]
            row = 0.0
            for c in range(wo):
                ma = mua[r, c]
                mb = mus[b, r, c]
                m = ma * mb
                num = (2.0 * m + c1) * (2.0 * (cov[c] - m) + c2)
                den = (ma * ma + mb * mb + c1) * (vara[r, c] + vars_[b, r, c] + c2)
                row += num / den
            total += row
        out[n] = total / (ho * wo)


def pair_index(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _unrank_pair(k: int, n: int) -> tuple[int, int]:
    # Lexicographic rank of (i, j), i < j, among all pairs of n items.
    i = 0
    row = n - 1
    while k >= row:
        k -= row
        i += 1
        row -= 1
    return i, i + 1 + k


@dataclass(frozen=True)
class ClassSsim:
    mean: float
    sd: float
    pair_count: int
    stderr: float | None = None
    sampled: bool = False
    pairs: tuple[tuple[int, int, float], ...] = field(default=(), repr=False)


def _stats(values: Sequence[float]) -> tuple[float, float]:
    # fsum is exactly rounded, so the result does not depend on value order.
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def pairwise_ssim(
    images: Sequence[RasterImage], pairs: Sequence[tuple[int, int]] | None = None
) -> list[tuple[int, int, float]]:
    """SSIM for the given index pairs (all unordered pairs by default)."""
    n = len(images)
    if images and any(im.size != images[0].size for im in images):
        raise ValueError("all images must share one size")
    moments = [_moments(im) for im in images]
    if pairs is None:
        pairs = pair_index(n)
    if not pairs:
        return []
    ys = np.stack([m.y for m in moments])
    mus = np.stack([m.mu for m in moments])
    vars_ = np.stack([m.var for m in moments])
    by_first: dict[int, list[int]] = {}
    for i, j in pairs:
        by_first.setdefault(i, []).append(j)
    out: dict[tuple[int, int], float] = {}
    for i, js in by_first.items():
        vals = np.empty(len(js))
        _ssim_against(ys[i], mus[i], vars_[i], ys, mus, vars_, np.asarray(js, dtype=np.intp), _WINDOW, C1, C2, vals)
        for j, v in zip(js, vals):
            out[(i, j)] = float(v)
    return [(i, j, out[(i, j)]) for i, j in pairs]


def class_ssim(
    images: Sequence[RasterImage],
    resize_to: int | None = 224,
    sample_pairs: int | None = None,
    seed: int = 0,
) -> ClassSsim:
    """Mean and population SD of SSIM over unordered image pairs.

    With ``sample_pairs`` K smaller than the number of pairs, K distinct pairs
    are drawn uniformly with ``seed`` and the standard error of the mean is
    reported alongside.
    """
    n = len(images)
    if n < 2:
        raise ValueError(f"class SSIM needs at least 2 images, got {n}")
    if resize_to is not None:
        images = [resize(im, resize_to, resize_to) for im in images]
    total = n * (n - 1) // 2
    sampled = sample_pairs is not None and sample_pairs < total
    if sampled:
        if sample_pairs < 1:
            raise ValueError("sample_pairs must be ≥ 1")
        ranks = np.random.default_rng(seed).choice(total, size=sample_pairs, replace=False)
        pairs = sorted(_unrank_pair(int(k), n) for k in ranks)
    else:
        pairs = pair_index(n)
    values = pairwise_ssim(images, pairs)
    mean, sd = _stats([v for _, _, v in values])
    stderr = sd / math.sqrt(len(values)) if sampled else None
    return ClassSsim(mean, sd, len(values), stderr, sampled, tuple(values))


def colorfulness(img: RasterImage, resize_to: int | None = 224) -> float:
    """Hasler-Süsstrunk colorfulness, population statistics over all pixels.

    Sums are taken in exact integer arithmetic on rg = R-G and 2*yb = R+G-2B,
    so the value depends only on the pixel multiset.
    """
    if resize_to is not None:
        img = resize(img, resize_to, resize_to)
    px = img.pixels.astype(np.int64)
    rg = px[..., 0] - px[..., 1]
    yb2 = px[..., 0] + px[..., 1] - 2 * px[..., 2]
    n = rg.size
    s_rg, s_yb2 = int(rg.sum()), int(yb2.sum())
    q_rg, q_yb2 = int((rg * rg).sum()), int((yb2 * yb2).sum())
    # n^2 * variance, exact
    var_rg = (n * q_rg - s_rg * s_rg) / (n * n)
    var_yb = (n * q_yb2 - s_yb2 * s_yb2) / (4 * n * n)
    mean_rg = s_rg / n
    mean_yb = s_yb2 / (2 * n)
    return math.sqrt(var_rg + var_yb) + 0.3 * math.sqrt(mean_rg * mean_rg + mean_yb * mean_yb)


# --- audit ----------------------------------------------------------------


@dataclass
class ClassReport:
    image_count: int
    ssim_mean: float | None
    ssim_sd: float | None
    pair_count: int
    colorfulness: list[float]
    colorfulness_mean: float
    colorfulness_sd: float
    ssim_stderr: float | None = None
    sampled: bool = False


@dataclass
class DiversityReport:
    per_class: dict[str, ClassReport]
    dataset_level: dict
    unreadable: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class": {k: asdict(v) for k, v in self.per_class.items()},
            "dataset_level": self.dataset_level,
            "unreadable": self.unreadable,
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiversityReport":
        return cls(
            per_class={k: ClassReport(**v) for k, v in data["per_class"].items()},
            dataset_level=data["dataset_level"],
            unreadable=list(data.get("unreadable", [])),
            warnings=list(data.get("warnings", [])),
        )


def write_report(report: DiversityReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_report(path) -> DiversityReport:
    return DiversityReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _discover(dataset_dir: Path, manifest: DatasetManifest | None) -> dict[str, list[Path]]:
    if manifest is not None:
        return {c.label.name: [dataset_dir / im.path for im in c.images] for c in manifest.classes}
    classes = {}
    for sub in sorted(p for p in dataset_dir.iterdir() if p.is_dir()):
        files = sorted(f for f in sub.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES)
        if files:
            classes[sub.name] = files
    return classes


def _summary(values: Sequence[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "sd": None, "min": None, "max": None, "median": None}
    mean, sd = _stats(values)
    return {
        "count": len(values),
        "mean": mean,
        "sd": sd,
        "min": min(values),
        "max": max(values),
        "median": float(np.median(values)),
    }


def audit(
    dataset_dir,
    manifest: DatasetManifest | None = None,
    resize_to: int = 224,
    sample_pairs: int | None = None,
    seed: int = 0,
    pairs_csv=None,
) -> DiversityReport:
    """SSIM and colorfulness for every class of a class-per-folder dataset.

    Unreadable files are listed in the report and skipped; the audit fails
    only if nothing could be read.
    """
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise AuditError(f"dataset directory {dataset_dir} does not exist")
    classes = _discover(dataset_dir, manifest)
    if not classes:
        raise AuditError("no classes found")

    per_class: dict[str, ClassReport] = {}
    unreadable: list[str] = []
    warnings: list[str] = []
    csv_rows = []
    for name, paths in classes.items():
        images, kept = [], []
        for p in paths:
            try:
                images.append(resize(read_image(p), resize_to, resize_to))
                kept.append(p)
            except (OSError, ValueError) as exc:
                log.warning("cannot read %s: %s", p, exc)
                unreadable.append(str(p))
        if not images:
            warnings.append(f"class {name!r} has no readable images")
            continue
        colors = [colorfulness(im, resize_to=None) for im in images]
        c_mean, c_sd = _stats(colors)
        if len(images) < 2:
            msg = f"class {name!r} has {len(images)} image; SSIM needs at least 2"
            log.warning(msg)
            warnings.append(msg)
            per_class[name] = ClassReport(len(images), None, None, 0, colors, c_mean, c_sd)
            continue
        cs = class_ssim(images, resize_to=None, sample_pairs=sample_pairs, seed=seed)
        per_class[name] = ClassReport(
            len(images), cs.mean, cs.sd, cs.pair_count, colors, c_mean, c_sd, cs.stderr, cs.sampled
        )
        if pairs_csv is not None:
            for i, j, v in cs.pairs:
                csv_rows.append((name, kept[i].relative_to(dataset_dir).as_posix(),
                                 kept[j].relative_to(dataset_dir).as_posix(), v))

    if not per_class:
        raise AuditError("no readable images in any class")

    class_means = [r.ssim_mean for r in per_class.values() if r.ssim_mean is not None]
    all_colors = [c for r in per_class.values() for c in r.colorfulness]
    dataset_level = {
        "class_count": len(per_class),
        "image_count": sum(r.image_count for r in per_class.values()),
        "ssim_mean_of_class_means": _stats(class_means)[0] if class_means else None,
        "ssim_sd_across_classes": _stats(class_means)[1] if class_means else None,
        "ssim_mean_sd_within_classes": (
            math.fsum(r.ssim_sd for r in per_class.values() if r.ssim_sd is not None) / len(class_means)
            if class_means else None
        ),
        "colorfulness": _summary(all_colors),
        "resize": resize_to,
    }

    if pairs_csv is not None:
        with open(pairs_csv, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["class", "image_a", "image_b", "ssim"])
            w.writerows(csv_rows)

    return DiversityReport(per_class, dataset_level, unreadable, warnings)
