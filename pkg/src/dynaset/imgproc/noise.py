"""Post-processing noise techniques.

Pixels are scaled to [0, 1], perturbed, clipped, and requantized to 8 bits.
All randomness comes from :mod:`dynaset.imgproc.rng`, keyed by the spec's
seed plus the pixel (and channel) index, so output is bit-identical for a
fixed seed regardless of evaluation order.

Parameter defaults follow scikit-image's ``random_noise`` conventions
(variance 0.01, amount 0.05, salt_vs_pepper 0.5).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from dynaset.imgproc import rng
from dynaset.imgproc.raster import RasterImage

_U64_MAX = (1 << 64) - 1

# Stream ids keep draws for different purposes uncorrelated.
_STREAM_GAUSS = 1
_STREAM_LOCALVAR = 2
_STREAM_POISSON = 3
_STREAM_CORRUPT = 4
_STREAM_SALT_OR_PEPPER = 5
_STREAM_SPECKLE = 6


class NoiseKind(str, enum.Enum):
    GAUSSIAN_BLUR = "gaussian_blur"
    GAUSSIAN_NOISE = "gaussian_noise"
    LOCALVAR_NOISE = "localvar_noise"
    POISSON_NOISE = "poisson_noise"
    SALT = "salt"
    PEPPER = "pepper"
    SALT_AND_PEPPER = "salt_and_pepper"
    SPECKLE = "speckle"

    @classmethod
    def parse(cls, name: str) -> "NoiseKind":
        key = name.strip().lower().replace("-", "_").replace(" ", "_")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown noise kind {name!r}; expected one of: {valid}") from None


_ALIASES = {
    "blur": "gaussian_blur",
    "gaussian": "gaussian_noise",
    "localvar": "localvar_noise",
    "poisson": "poisson_noise",
    "s&p": "salt_and_pepper",
    "sp": "salt_and_pepper",
}

# Which parameters each kind reads; everything else is ignored and not serialized.
_PARAMS = {
    NoiseKind.GAUSSIAN_BLUR: ("kernel_size", "sigma"),
    NoiseKind.GAUSSIAN_NOISE: ("mean", "variance"),
    NoiseKind.LOCALVAR_NOISE: ("variance", "var_map_path"),
    NoiseKind.POISSON_NOISE: (),
    NoiseKind.SALT: ("amount",),
    NoiseKind.PEPPER: ("amount",),
    NoiseKind.SALT_AND_PEPPER: ("amount", "salt_fraction"),
    NoiseKind.SPECKLE: ("variance",),
}


def default_blur_sigma(kernel_size: int) -> float:
    """The usual kernel-size to sigma rule; 1.1 for a 5x5 kernel."""
    return 0.3 * ((kernel_size - 1) * 0.5 - 1) + 0.8


@dataclass(frozen=True)
class NoiseSpec:
    """One post-processing technique, its parameters, and its RNG seed.

    For localvar noise the variance map is ``var_map_path`` (a ``.npy`` array
    of shape (H, W) or (H, W, 3)) when given, else a uniform map filled with
    ``variance``.
    """

    kind: NoiseKind
    seed: int = 0
    kernel_size: int = 5
    sigma: float = field(default=None)  # type: ignore[assignment]
    mean: float = 0.0
    variance: float = 0.01
    amount: float = 0.05
    salt_fraction: float = 0.5
    var_map_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind.parse(self.kind) if isinstance(self.kind, str) else self.kind)
        if self.sigma is None:
            object.__setattr__(self, "sigma", default_blur_sigma(self.kernel_size))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not 0 <= self.seed <= _U64_MAX:
            out.append("seed must be an unsigned 64-bit integer")
        k = self.kind
        if k is NoiseKind.GAUSSIAN_BLUR:
            if self.kernel_size < 3 or self.kernel_size % 2 == 0:
                out.append("kernel_size must be odd and ≥ 3")
            if not self.sigma > 0:
                out.append("sigma must be > 0")
        if k in (NoiseKind.GAUSSIAN_NOISE, NoiseKind.LOCALVAR_NOISE, NoiseKind.SPECKLE):
            if not self.variance >= 0:
                out.append("variance must be ≥ 0")
        if k is NoiseKind.GAUSSIAN_NOISE and not math.isfinite(self.mean):
            out.append("mean must be finite")
        if k in (NoiseKind.SALT, NoiseKind.PEPPER, NoiseKind.SALT_AND_PEPPER):
            if not 0.0 <= self.amount <= 1.0:
                out.append("amount must be in [0, 1]")
        if k is NoiseKind.SALT_AND_PEPPER and not 0.0 <= self.salt_fraction <= 1.0:
            out.append("salt_fraction must be in [0, 1]")
        return out

    def with_seed(self, seed: int) -> "NoiseSpec":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "seed": self.seed}
        for name in _PARAMS[self.kind]:
            value = getattr(self, name)
            if name == "var_map_path" and value is None:
                continue
            d[name] = value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown noise parameters: {sorted(unknown)}")
        if "kind" not in data:
            raise ValueError("noise spec is missing 'kind'")
        return cls(**data)


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (outer product of a 1-D kernel)."""
    g = gaussian_kernel_1d(kernel_size, sigma)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_kernel_1d(kernel_size: int, sigma: float) -> np.ndarray:
    x = np.arange(kernel_size, dtype=np.float64) - (kernel_size - 1) / 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _blur(x: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
    # Separable form of the 2-D kernel; "reflect" mirrors without repeating the edge.
    g = gaussian_kernel_1d(kernel_size, sigma)
    r = kernel_size // 2
    h, w = x.shape[:2]
    padded = np.pad(x, ((r, r), (r, r), (0, 0)), mode="reflect")
    tmp = np.zeros((h + 2 * r, w, x.shape[2]))
    for i, wt in enumerate(g):
        tmp += wt * padded[:, i : i + w]
    out = np.zeros_like(x)
    for i, wt in enumerate(g):
        out += wt * tmp[i : i + h]
    return out


def _channel_counters(h: int, w: int) -> np.ndarray:
    return np.arange(h * w * 3, dtype=np.uint64).reshape(h, w, 3)


def _pixel_counters(h: int, w: int) -> np.ndarray:
    return np.arange(h * w, dtype=np.uint64).reshape(h, w)


def load_var_map(path) -> np.ndarray:
    return np.load(Path(path), allow_pickle=False)


def _as_var_map(var_map: np.ndarray, h: int, w: int) -> np.ndarray:
    m = np.asarray(var_map, dtype=np.float64)
    if m.shape == (h, w):
        m = m[:, :, None]
    elif m.shape != (h, w, 3):
        raise ValueError(f"variance map shape {m.shape} does not match image {w}x{h}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValueError("variance map entries must be finite and ≥ 0")
    return m


def apply_noise(img: RasterImage, spec: NoiseSpec, var_map: np.ndarray | None = None) -> RasterImage:
    """Apply one post-processing technique to ``img``.

    ``var_map`` overrides the spec's variance map for localvar noise.
    """
    kind = spec.kind
    h, w = img.height, img.width
    x = img.to_unit_float()

    if kind is NoiseKind.GAUSSIAN_BLUR:
        out = _blur(x, spec.kernel_size, spec.sigma)
    elif kind is NoiseKind.GAUSSIAN_NOISE:
        n = rng.standard_normal(spec.seed, _STREAM_GAUSS, _channel_counters(h, w))
        out = x + spec.mean + math.sqrt(spec.variance) * n
    elif kind is NoiseKind.LOCALVAR_NOISE:
        if var_map is None and spec.var_map_path is not None:
            var_map = load_var_map(spec.var_map_path)
        if var_map is None:
            var_map = np.full((h, w), spec.variance)
        m = _as_var_map(var_map, h, w)
        n = rng.standard_normal(spec.seed, _STREAM_LOCALVAR, _channel_counters(h, w))
        out = x + np.sqrt(m) * n
    elif kind is NoiseKind.POISSON_NOISE:
        distinct = len(np.unique(img.pixels))
        q = 2.0 ** math.ceil(math.log2(distinct))
        counts = rng.poisson(spec.seed, _STREAM_POISSON, _channel_counters(h, w), x * q)
        out = counts / q
    elif kind in (NoiseKind.SALT, NoiseKind.PEPPER, NoiseKind.SALT_AND_PEPPER):
        u = rng.uniform(spec.seed, _STREAM_CORRUPT, _pixel_counters(h, w))
        hit = u < spec.amount
        out = x.copy()
        if kind is NoiseKind.SALT:
            out[hit] = 1.0
        elif kind is NoiseKind.PEPPER:
            out[hit] = 0.0
        else:
            v = rng.uniform(spec.seed, _STREAM_SALT_OR_PEPPER, _pixel_counters(h, w))
            salt = v < spec.salt_fraction
            out[hit & salt] = 1.0
            out[hit & ~salt] = 0.0
    elif kind is NoiseKind.SPECKLE:
        n = rng.standard_normal(spec.seed, _STREAM_SPECKLE, _channel_counters(h, w))
        out = x + x * (math.sqrt(spec.variance) * n)
    else:  # pragma: no cover
        raise ValueError(f"unsupported noise kind {kind}")

    return RasterImage.from_unit_float(out)
