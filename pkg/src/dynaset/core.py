"""Domain types shared across the package, plus manifest and config I/O."""

from __future__ import annotations

import enum
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from dynaset.imgproc.noise import NoiseSpec

U64_MAX = (1 << 64) - 1
MANIFEST_SUFFIX = ".manifest.json"
DEFAULT_MANIFEST_NAME = "dataset" + MANIFEST_SUFFIX


class ManifestError(ValueError):
    """A manifest file violates the schema."""


class ConfigError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration: " + "; ".join(self.errors))


def hash64(*parts: Any) -> int:
    """Stable 64-bit hash of a tuple of ints/strings/None.

    Each part is tagged and length-prefixed so ("ab", "c") and ("a", "bc")
    hash differently.
    """
    h = hashlib.blake2b(digest_size=8, person=b"dynaset.hash64")
    for p in parts:
        if p is None:
            h.update(b"n")
        elif isinstance(p, bool):
            h.update(b"b1" if p else b"b0")
        elif isinstance(p, int):
            raw = str(p).encode()
            h.update(b"i" + len(raw).to_bytes(4, "little") + raw)
        elif isinstance(p, str):
            raw = p.encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(4, "little") + raw)
        else:
            raise TypeError(f"hash64 does not accept {type(p).__name__}")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class Label:
    """A class name plus an optional disambiguating context word."""

    name: str
    context: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name.strip():
            raise ValueError("label name must be non-empty")
        if "/" in self.name or "\\" in self.name or self.name.strip() in (".", ".."):
            raise ValueError(f"label name {self.name!r} cannot be used as a directory name")
        if self.context is not None and not self.context.strip():
            object.__setattr__(self, "context", None)

    def to_dict(self) -> dict:
        return {"name": self.name, "context": self.context}

    @classmethod
    def from_dict(cls, data) -> "Label":
        if isinstance(data, str):
            return cls(data)
        if "name" not in data:
            raise ValueError("label is missing 'name'")
        return cls(data["name"], data.get("context"))


class PromptSource(str, enum.Enum):
    NAIVE = "naive"
    LLM = "llm"
    CAPTION = "caption"
    DIVERSIFIED = "diversified"


@dataclass(frozen=True)
class Prompt:
    text: str
    label: Label
    source: PromptSource

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", PromptSource(self.source))
        if not self.text or not self.text.strip():
            raise ValueError("prompt text must be non-empty")
        if self.source is not PromptSource.LLM and self.label.name not in self.text:
            raise ValueError(
                f"{self.source.value} prompt {self.text!r} must contain the label {self.label.name!r}"
            )

    def to_dict(self) -> dict:
        return {"text": self.text, "label": self.label.to_dict(), "source": self.source.value}

    @classmethod
    def from_dict(cls, data: dict) -> "Prompt":
        return cls(data["text"], Label.from_dict(data["label"]), PromptSource(data["source"]))


@dataclass(frozen=True)
class PromptSet:
    label: Label
    prompts: tuple[Prompt, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if not self.prompts:
            raise ValueError("a prompt set needs at least one prompt")
        for p in self.prompts:
            if p.label != self.label:
                raise ValueError(f"prompt {p.text!r} belongs to label {p.label.name!r}, not {self.label.name!r}")
        texts = [p.text for p in self.prompts]
        if len(set(texts)) != len(texts):
            raise ValueError("prompt texts must be pairwise distinct")

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    @property
    def texts(self) -> list[str]:
        return [p.text for p in self.prompts]

    def to_dict(self) -> dict:
        return {
            "label": self.label.to_dict(),
            "prompts": self.texts,
            "sources": [p.source.value for p in self.prompts],
        }


# --- manifest -------------------------------------------------------------


@dataclass(frozen=True)
class ImageEntry:
    path: str
    prompt: Prompt
    seed: int
    postprocess: NoiseSpec | None = None

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "prompt": self.prompt.to_dict(),
            "seed": self.seed,
            "postprocess": None if self.postprocess is None else self.postprocess.to_dict(),
        }


@dataclass(frozen=True)
class ClassEntry:
    label: Label
    images: tuple[ImageEntry, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))


def _utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    fmt = "%Y-%m-%dT%H:%M:%S.%fZ" if ts.microsecond else "%Y-%m-%dT%H:%M:%SZ"
    return ts.strftime(fmt)


def parse_timestamp(text: str) -> datetime:
    for fmt in ("%Y-%m-%dT%H:%M:%S.%fZ", "%Y-%m-%dT%H:%M:%SZ"):
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            pass
    raise ManifestError(f"created_at {text!r} is not an RFC 3339 UTC timestamp")


@dataclass(frozen=True)
class DatasetManifest:
    classes: tuple[ClassEntry, ...] = ()
    created_at: datetime = field(default_factory=_utc_now)
    generator: str = "mock"
    image_size: tuple[int, int] = (224, 224)

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        seen = set()
        for c in self.classes:
            for im in c.images:
                if im.path in seen:
                    raise ManifestError(f"duplicate image path {im.path!r}")
                seen.add(im.path)
                if im.prompt.label != c.label:
                    raise ManifestError(
                        f"image {im.path!r} has prompt label {im.prompt.label.name!r}, "
                        f"expected {c.label.name!r}"
                    )

    @property
    def entries(self) -> list[ImageEntry]:
        return [im for c in self.classes for im in c.images]

    def to_dict(self) -> dict:
        return {
            "classes": [
                {"label": c.label.to_dict(), "images": [im.to_dict() for im in c.images]}
                for c in self.classes
            ],
            "created_at": format_timestamp(self.created_at),
            "generator": self.generator,
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        try:
            classes = []
            for c in _require(data, "classes", "manifest"):
                label = Label.from_dict(_require(c, "label", "class entry"))
                images = []
                for im in _require(c, "images", "class entry"):
                    pp = _require(im, "postprocess", "image entry")
                    seed = _require(im, "seed", "image entry")
                    if not isinstance(seed, int) or not 0 <= seed <= U64_MAX:
                        raise ManifestError(f"seed {seed!r} is not an unsigned 64-bit integer")
                    images.append(
                        ImageEntry(
                            path=_require(im, "path", "image entry"),
                            prompt=Prompt.from_dict(_require(im, "prompt", "image entry")),
                            seed=seed,
                            postprocess=None if pp is None else NoiseSpec.from_dict(pp),
                        )
                    )
                classes.append(ClassEntry(label, tuple(images)))
            size = _require(data, "image_size", "manifest")
            if len(size) != 2:
                raise ManifestError("image_size must be [width, height]")
            return cls(
                classes=tuple(classes),
                created_at=parse_timestamp(_require(data, "created_at", "manifest")),
                generator=_require(data, "generator", "manifest"),
                image_size=(int(size[0]), int(size[1])),
            )
        except ManifestError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(str(exc)) from exc


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise ManifestError(f"{where} must be a JSON object")
    if key not in obj:
        raise ManifestError(f"{where} is missing field {key!r}")
    return obj[key]


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(m: DatasetManifest, path) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory {path.parent} does not exist")
    atomic_write_text(path, json.dumps(m.to_dict(), indent=2, ensure_ascii=False) + "\n")


def read_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    return DatasetManifest.from_dict(data)


# --- configuration --------------------------------------------------------

STRATEGIES = ("naive", "llm", "caption")
BACKENDS = ("mock", "http")
LLM_BACKENDS = ("fixture", "http")
PREPROCESS_MODES = ("resize", "crop")
DEFAULT_COARSE_SUBJECTS = ("dog", "cat", "food", "object")


@dataclass(frozen=True)
class LlmSettings:
    """Where LLM prompt suggestions come from.

    ``fixture`` replays a JSON object mapping query text to response text.
    ``http`` posts to an OpenAI-style chat-completions endpoint.
    """

    backend: str = "fixture"
    fixture: str | None = None
    endpoint: str | None = None
    model: str = "gpt-3.5-turbo"
    token_env: str = "DYNASET_LLM_TOKEN"
    template: str | None = None
    max_in_flight: int = 2
    timeout: float = 60.0


@dataclass(frozen=True)
class HttpSettings:
    """Remote text-to-image endpoint. ``extra`` is merged into each request body."""

    endpoint: str | None = None
    token_env: str = "DYNASET_API_TOKEN"
    timeout: float = 300.0
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FormulationConfig:
    labels: tuple[Label, ...] = ()
    prompts_per_class: int = 10
    images_per_prompt: int = 18
    resolution: int = 768
    output_size: int = 224
    noise: NoiseSpec | None = None
    backend: str = "mock"
    seed: int = 0
    strategy: str = "naive"
    diversify: bool = False
    vectors: str | None = None
    lexicon: str | None = None
    captions: str | None = None
    coarse_subjects: tuple[str, ...] = DEFAULT_COARSE_SUBJECTS
    preprocess: str = "resize"
    max_in_flight: int = 2
    llm: LlmSettings = field(default_factory=LlmSettings)
    http: HttpSettings = field(default_factory=HttpSettings)

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "coarse_subjects", tuple(self.coarse_subjects))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "labels":
                v = [lab.to_dict() for lab in v]
            elif f.name == "noise":
                v = None if v is None else v.to_dict()
            elif f.name in ("llm", "http"):
                v = {g.name: getattr(v, g.name) for g in fields(v)}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d


def _positive_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def validate_config(cfg: FormulationConfig) -> list[str]:
    """Every violated config invariant, as a list of messages."""
    errors = []
    if not cfg.labels:
        errors.append("labels must contain at least one label")
    names = [lab.name for lab in cfg.labels]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        errors.append(f"label names must be unique (duplicated: {', '.join(dupes)})")
    if not _positive_int(cfg.prompts_per_class):
        errors.append("prompts_per_class must be ≥ 1")
    if not _positive_int(cfg.images_per_prompt):
        errors.append("images_per_prompt must be ≥ 1")
    if not _positive_int(cfg.resolution):
        errors.append("resolution must be a positive integer")
    if not _positive_int(cfg.output_size):
        errors.append("output_size must be a positive integer")
    if _positive_int(cfg.resolution) and _positive_int(cfg.output_size):
        if cfg.resolution < cfg.output_size:
            errors.append("resolution must be ≥ output_size")
    if _positive_int(cfg.resolution) and (cfg.resolution < 64 or cfg.resolution % 8):
        errors.append("resolution must be ≥ 64 and a multiple of 8")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed <= U64_MAX:
        errors.append("seed must be an unsigned 64-bit integer")
    if cfg.backend not in BACKENDS:
        errors.append(f"backend must be one of {', '.join(BACKENDS)}")
    if cfg.backend == "http" and not cfg.http.endpoint:
        errors.append("http backend requires http.endpoint")
    if cfg.strategy not in STRATEGIES:
        errors.append(f"strategy must be one of {', '.join(STRATEGIES)}")
    if cfg.strategy == "caption" and not cfg.captions:
        errors.append("caption strategy requires captions")
    if cfg.strategy == "llm":
        if cfg.llm.backend not in LLM_BACKENDS:
            errors.append(f"llm.backend must be one of {', '.join(LLM_BACKENDS)}")
        elif cfg.llm.backend == "fixture" and not cfg.llm.fixture:
            errors.append("llm fixture backend requires llm.fixture")
        elif cfg.llm.backend == "http" and not cfg.llm.endpoint:
            errors.append("llm http backend requires llm.endpoint")
        if not _positive_int(cfg.llm.max_in_flight):
            errors.append("llm.max_in_flight must be ≥ 1")
    if cfg.diversify and not cfg.vectors:
        errors.append("diversify requires vectors")
    if not cfg.coarse_subjects and cfg.strategy == "caption":
        errors.append("coarse_subjects must not be empty")
    if cfg.preprocess not in PREPROCESS_MODES:
        errors.append(f"preprocess must be one of {', '.join(PREPROCESS_MODES)}")
    if not _positive_int(cfg.max_in_flight):
        errors.append("max_in_flight must be ≥ 1")
    return errors


def config_from_dict(data: dict, base_dir=None) -> FormulationConfig:
    """Build a config from its JSON form; relative file paths resolve against ``base_dir``."""
    known = {f.name for f in fields(FormulationConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError([f"unknown config field {k!r}" for k in sorted(unknown)])
    kw = dict(data)
    try:
        if "labels" in kw:
            kw["labels"] = tuple(Label.from_dict(x) for x in kw["labels"])
        if kw.get("noise") is not None:
            kw["noise"] = NoiseSpec.from_dict(kw["noise"])
        if "llm" in kw:
            kw["llm"] = LlmSettings(**kw["llm"])
        if "http" in kw:
            kw["http"] = HttpSettings(**kw["http"])
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from exc

    if base_dir is not None:
        base = Path(base_dir)

        def resolve(p):
            return None if p is None else str((base / p) if not Path(p).is_absolute() else Path(p))

        for key in ("vectors", "lexicon", "captions"):
            if key in kw:
                kw[key] = resolve(kw[key])
        if isinstance(kw.get("llm"), LlmSettings) and kw["llm"].fixture:
            llm = kw["llm"]
            kw["llm"] = LlmSettings(**{**llm.__dict__, "fixture": resolve(llm.fixture)})
    return FormulationConfig(**kw)


def load_config(path) -> FormulationConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    return config_from_dict(data, base_dir=path.parent)
