"""End-to-end dataset formulation: labels -> prompts -> images -> files + manifest."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from dynaset.core import (
    DEFAULT_MANIFEST_NAME,
    MANIFEST_SUFFIX,
    ClassEntry,
    ConfigError,
    DatasetManifest,
    FormulationConfig,
    ImageEntry,
    Label,
    Prompt,
    PromptSet,
    PromptSource,
    hash64,
    read_manifest,
    validate_config,
    write_manifest,
)
from dynaset.embeddings import WordVectorStore, load_vectors
from dynaset.genclient import Backend, GenerationError, GenRequest, generate_batch, make_backend
from dynaset.imgproc.noise import NoiseSpec, apply_noise
from dynaset.imgproc.raster import IMAGE_SUFFIXES, RasterImage, center_crop, read_image, square_resize, write_png
from dynaset.llm import FixtureLlm, HttpChatLlm, LlmBackend, llm_prompts
from dynaset.prompt import (
    AnimacyLexicon,
    LlmQuery,
    caption_prompts,
    captions_for_label,
    classify_animacy,
    diversify,
    insert_modifier,
    load_lexicon,
    naive_prompt,
)

log = logging.getLogger(__name__)

ERROR_LOG_NAME = "errors.jsonl"


class FormulationError(RuntimeError):
    pass


def image_seed(base_seed: int, class_idx: int, prompt_idx: int, image_idx: int) -> int:
    return hash64(base_seed, class_idx, prompt_idx, image_idx)


def image_relpath(label: Label, prompt_idx: int, image_idx: int) -> str:
    return f"{label.name}/{prompt_idx}_{image_idx}.png"


@dataclass
class Failure:
    label: str
    prompt_idx: int
    image_idx: int
    error_kind: str
    message: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "class": self.label,
                "prompt_idx": self.prompt_idx,
                "image_idx": self.image_idx,
                "error_kind": self.error_kind,
                "message": self.message,
            }
        )


def read_error_log(path) -> list[Failure]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out.append(Failure(d["class"], d["prompt_idx"], d["image_idx"], d["error_kind"], d["message"]))
    return out


class Formulator:
    """Holds the resolved backends and resources for one config.

    Construction fails exactly when :func:`validate_config` reports errors;
    vector files, fixtures and backends are opened lazily.
    """

    def __init__(
        self,
        cfg: FormulationConfig,
        backend: Backend | None = None,
        llm: LlmBackend | None = None,
    ):
        errors = validate_config(cfg)
        if errors:
            raise ConfigError(errors)
        self.cfg = cfg
        self._backend = backend
        self._llm = llm
        self._store: WordVectorStore | None = None
        self._lexicon: AnimacyLexicon | None = None

    @property
    def backend(self) -> Backend:
        if self._backend is None:
            self._backend = make_backend(self.cfg.backend, self.cfg.http)
        return self._backend

    @property
    def llm(self) -> LlmBackend:
        if self._llm is None:
            s = self.cfg.llm
            if s.backend == "fixture":
                self._llm = FixtureLlm.from_file(s.fixture)
            else:
                self._llm = HttpChatLlm(s.endpoint, s.model, s.token_env, s.timeout, s.max_in_flight)
        return self._llm

    @property
    def store(self) -> WordVectorStore | None:
        if self._store is None and self.cfg.vectors:
            self._store = load_vectors(self.cfg.vectors)
        return self._store

    @property
    def lexicon(self) -> AnimacyLexicon:
        if self._lexicon is None:
            self._lexicon = load_lexicon(self.cfg.lexicon) if self.cfg.lexicon else AnimacyLexicon()
        return self._lexicon

    # -- prompts --

    def base_prompts(self, label: Label) -> list[Prompt]:
        cfg = self.cfg
        if cfg.strategy == "naive":
            return [naive_prompt(label)]
        if cfg.strategy == "llm":
            q = LlmQuery(cfg.llm.template, cfg.prompts_per_class) if cfg.llm.template else LlmQuery(count=cfg.prompts_per_class)
            return list(llm_prompts(self.llm, label, q))
        return list(caption_prompts(captions_for_label(cfg.captions, label), label, cfg.coarse_subjects))

    def prompts_for(self, label: Label) -> list[Prompt]:
        """Exactly ``prompts_per_class`` prompts for one label.

        With diversification on, base prompt i gets modifier i mod k. Short
        lists are padded with diversified naive prompts when word vectors are
        configured, then by cycling what is there.
        """
        cfg = self.cfg
        want = cfg.prompts_per_class
        prompts = self.base_prompts(label)

        if cfg.diversify:
            modifiers = self.lexicon.modifiers(classify_animacy(self.store, self.lexicon, label))
            varied = []
            for i, p in enumerate(prompts):
                try:
                    text = insert_modifier(p.text, label, modifiers[i % len(modifiers)])
                except ValueError:
                    log.info("prompt %r does not mention %r; kept undiversified", p.text, label.name)
                    varied.append(p)
                    continue
                varied.append(Prompt(text, label, PromptSource.DIVERSIFIED))
            prompts = list({p.text: p for p in varied}.values())

        if len(prompts) < want:
            # the naive template yields one prompt by design; padding is only news otherwise
            level = logging.INFO if cfg.strategy == "naive" else logging.WARNING
            log.log(level, "%r: %d distinct prompts, %d wanted; padding", label.name, len(prompts), want)
            if self.store is not None:
                seen = {p.text for p in prompts}
                for p in diversify(self.store, self.lexicon, label, naive_prompt(label)):
                    if len(prompts) >= want:
                        break
                    if p.text not in seen:
                        prompts.append(p)
                        seen.add(p.text)
            base = list(prompts)
            while len(prompts) < want:
                prompts.append(base[len(prompts) % len(base)])
        return prompts[:want]

    def prompt_set(self, label: Label) -> PromptSet:
        """Distinct prompts for ``label`` (what :meth:`prompts_for` cycles over)."""
        unique = {p.text: p for p in self.prompts_for(label)}
        return PromptSet(label, tuple(unique.values()))

    # -- images --

    def _finish(self, img: RasterImage) -> RasterImage:
        if self.cfg.preprocess == "crop":
            return center_crop(img, self.cfg.output_size)
        return square_resize(img, self.cfg.output_size)

    def _noise_for(self, class_idx: int, prompt_idx: int, image_idx: int) -> NoiseSpec | None:
        spec = self.cfg.noise
        if spec is None:
            return None
        return spec.with_seed(hash64(spec.seed, class_idx, prompt_idx, image_idx))

    def _run(
        self,
        jobs: Sequence[tuple[int, int, int, Prompt]],
        output_dir: Path,
        error_log,
    ) -> dict[int, list[ImageEntry]]:
        cfg = self.cfg
        reqs = [
            GenRequest(p, cfg.resolution, cfg.resolution, image_seed(cfg.seed, c, pi, ii), ii)
            for c, pi, ii, p in jobs
        ]
        entries: dict[int, list[ImageEntry]] = {}
        # Bounded chunks keep memory flat and let files land as they finish.
        chunk = max(cfg.max_in_flight * 4, 16)
        for start in range(0, len(reqs), chunk):
            batch = generate_batch(self.backend, reqs[start : start + chunk], cfg.max_in_flight)
            for (c, pi, ii, prompt), (req, result) in zip(jobs[start : start + chunk], batch):
                label = cfg.labels[c]
                if isinstance(result, GenerationError):
                    fail = Failure(label.name, pi, ii, result.kind, str(result))
                    error_log.write(fail.to_json() + "\n")
                    error_log.flush()
                    continue
                img = self._finish(result)
                noise = self._noise_for(c, pi, ii)
                if noise is not None:
                    img = apply_noise(img, noise)
                rel = image_relpath(label, pi, ii)
                write_png(img, output_dir / rel)
                entries.setdefault(c, []).append(ImageEntry(rel, prompt, req.seed, noise))
        return entries

    def formulate(self, output_dir) -> DatasetManifest:
        cfg = self.cfg
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

        jobs = []
        for c, label in enumerate(cfg.labels):
            for pi, prompt in enumerate(self.prompts_for(label)):
                for ii in range(cfg.images_per_prompt):
                    jobs.append((c, pi, ii, prompt))

        with open(output_dir / ERROR_LOG_NAME, "w", encoding="utf-8") as error_log:
            entries = self._run(jobs, output_dir, error_log)

        empty = [lab.name for c, lab in enumerate(cfg.labels) if not entries.get(c)]
        if empty:
            raise FormulationError(
                f"no images generated for {', '.join(empty)}; see {output_dir / ERROR_LOG_NAME}"
            )
        manifest = DatasetManifest(
            classes=tuple(ClassEntry(lab, tuple(entries[c])) for c, lab in enumerate(cfg.labels)),
            generator=self.backend.name,
            image_size=(cfg.output_size, cfg.output_size),
        )
        write_manifest(manifest, output_dir / DEFAULT_MANIFEST_NAME)
        return manifest

    def retry_failed(self, output_dir, error_log_path) -> DatasetManifest:
        """Re-request only the images listed in an error log and merge them into the manifest."""
        cfg = self.cfg
        output_dir = Path(output_dir)
        failures = read_error_log(error_log_path)
        manifest_path = output_dir / DEFAULT_MANIFEST_NAME
        old = read_manifest(manifest_path) if manifest_path.exists() else None
        index = {lab.name: c for c, lab in enumerate(cfg.labels)}
        prompts = {}
        jobs = []
        for f in failures:
            if f.label not in index:
                raise FormulationError(f"error log names class {f.label!r} which is not in the config")
            c = index[f.label]
            if c not in prompts:
                prompts[c] = self.prompts_for(cfg.labels[c])
            jobs.append((c, f.prompt_idx, f.image_idx, prompts[c][f.prompt_idx]))

        existing = {c: [] for c in range(len(cfg.labels))}
        if old is not None:
            for ce in old.classes:
                if ce.label.name in index:
                    existing[index[ce.label.name]].extend(ce.images)
        with open(output_dir / ERROR_LOG_NAME, "w", encoding="utf-8") as error_log:
            fresh = self._run(jobs, output_dir, error_log)

        classes = []
        for c, lab in enumerate(cfg.labels):
            merged = {im.path: im for im in existing[c]}
            for im in fresh.get(c, []):
                merged[im.path] = im
            images = sorted(merged.values(), key=lambda im: _sort_key(im.path))
            if not images:
                raise FormulationError(f"no images for {lab.name} after retry")
            classes.append(ClassEntry(lab, tuple(images)))
        manifest = DatasetManifest(
            classes=tuple(classes),
            generator=self.backend.name,
            image_size=(cfg.output_size, cfg.output_size),
        )
        write_manifest(manifest, manifest_path)
        return manifest


def _sort_key(path: str):
    stem = Path(path).stem
    try:
        p, i = stem.split("_")
        return (int(p), int(i))
    except ValueError:
        return (1 << 62, 0)


def formulate(cfg: FormulationConfig, output_dir, backend: Backend | None = None, llm: LlmBackend | None = None) -> DatasetManifest:
    """Run the whole protocol for ``cfg``; returns the manifest written to ``output_dir``."""
    return Formulator(cfg, backend=backend, llm=llm).formulate(output_dir)


def expected_image_count(cfg: FormulationConfig) -> int:
    return len(cfg.labels) * cfg.prompts_per_class * cfg.images_per_prompt


# --- post-processing of an existing dataset --------------------------------


def postprocess_dataset(input_dir, spec: NoiseSpec, output_dir) -> int:
    """Apply ``spec`` to every image under ``input_dir``'s class folders.

    Each image gets its own seed, hash64(spec.seed, relative path), so
    re-runs are stable and independent of directory listing order. Outputs
    are PNG at the same relative path (suffix forced to .png). If the input
    holds a manifest it is rewritten with the per-image noise specs.
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory {input_dir} does not exist")
    written = 0
    applied: dict[str, tuple[str, NoiseSpec]] = {}
    for sub in sorted(p for p in input_dir.iterdir() if p.is_dir()):
        for f in sorted(sub.iterdir()):
            if not f.is_file() or f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            rel = f.relative_to(input_dir).as_posix()
            try:
                img = read_image(f)
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable %s: %s", f, exc)
                continue
            per_image = spec.with_seed(hash64(spec.seed, rel))
            out_rel = Path(rel).with_suffix(".png").as_posix()
            write_png(apply_noise(img, per_image), output_dir / out_rel)
            applied[rel] = (out_rel, per_image)
            written += 1

    manifests = sorted(input_dir.glob("*" + MANIFEST_SUFFIX))
    if manifests:
        m = read_manifest(manifests[0])
        classes = []
        for ce in m.classes:
            images = [
                replace(im, path=applied[im.path][0], postprocess=applied[im.path][1])
                for im in ce.images
                if im.path in applied
            ]
            classes.append(ClassEntry(ce.label, tuple(images)))
        output_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(replace(m, classes=tuple(classes)), output_dir / manifests[0].name)
    return written
