"""Prompt strategies: naive template, LLM suggestions, caption rewriting, and
embedding-driven diversification of the label."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from dynaset.core import DEFAULT_COARSE_SUBJECTS, Label, Prompt, PromptSet, PromptSource
from dynaset.embeddings import WordVectorStore, cosine_vectors

log = logging.getLogger(__name__)

DEFAULT_LLM_TEMPLATE = (
    "Can you recommend {count} simple prompts for image creation? "
    "I want to generate photo-realistic {class} images with txt2img model"
)


class EmptyResponse(ValueError):
    """An LLM response contained no list items. ``raw`` keeps the text for triage."""

    def __init__(self, raw: str):
        self.raw = raw
        preview = raw if len(raw) <= 200 else raw[:200] + "..."
        super().__init__(f"no list items found in LLM response: {preview!r}")


class NoSubjectFound(ValueError):
    def __init__(self, caption: str, subjects: Sequence[str]):
        self.caption = caption
        self.subjects = list(subjects)
        super().__init__(f"none of {self.subjects} occurs in caption {caption!r}")


class Animacy(str, enum.Enum):
    LIVING = "living"
    NONLIVING = "nonliving"


@dataclass(frozen=True)
class AnimacyLexicon:
    living_words: tuple[str, ...] = ("animate", "animal", "plant")
    nonliving_words: tuple[str, ...] = ("inanimate", "object", "man-made")
    living_modifiers: tuple[str, ...] = ("female", "young", "sick")
    nonliving_modifiers: tuple[str, ...] = ("broken", "red")

    def __post_init__(self) -> None:
        for name in ("living_words", "nonliving_words", "living_modifiers", "nonliving_modifiers"):
            value = tuple(getattr(self, name))
            object.__setattr__(self, name, value)
            if not value:
                raise ValueError(f"{name} must not be empty")
            if len(set(value)) != len(value):
                raise ValueError(f"{name} contains duplicates")
        shared = {w.lower() for w in self.living_words} & {w.lower() for w in self.nonliving_words}
        if shared:
            raise ValueError(f"words in both living and non-living lists: {sorted(shared)}")

    def modifiers(self, animacy: Animacy) -> tuple[str, ...]:
        return self.living_modifiers if animacy is Animacy.LIVING else self.nonliving_modifiers


def load_lexicon(path) -> AnimacyLexicon:
    """Read a JSON object with any of the four lexicon lists; missing lists keep defaults."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    allowed = {"living_words", "nonliving_words", "living_modifiers", "nonliving_modifiers"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown lexicon keys: {sorted(unknown)}")
    return AnimacyLexicon(**{k: tuple(v) for k, v in data.items()})


@dataclass(frozen=True)
class LlmQuery:
    template: str = DEFAULT_LLM_TEMPLATE
    count: int = 10

    def __post_init__(self) -> None:
        n = self.template.count("{class}")
        if n != 1:
            raise ValueError(f"query template must contain '{{class}}' exactly once (found {n})")
        if self.count < 1:
            raise ValueError("count must be ≥ 1")


def naive_prompt(label: Label) -> Prompt:
    text = "a photo of one " + label.name
    if label.context:
        text += " " + label.context
    return Prompt(text, label, PromptSource.NAIVE)


def build_llm_query(label: Label, q: LlmQuery | None = None) -> str:
    q = q or LlmQuery()
    return q.template.replace("{count}", str(q.count)).replace("{class}", label.name)


_LIST_ITEM = re.compile(r"^\s*(?:\d+\s*[.)]|-)\s*(.*?)\s*$")
_QUOTES = "\"'`“”‘’«»"


def parse_llm_response(raw: str, label: Label, expected: int) -> PromptSet:
    """Extract numbered ("1." / "1)") or dashed list items, in order, deduplicated."""
    seen: dict[str, None] = {}
    for line in raw.splitlines():
        m = _LIST_ITEM.match(line)
        if not m:
            continue
        text = m.group(1).strip().strip(_QUOTES).strip()
        if text:
            seen.setdefault(text, None)
    if not seen:
        raise EmptyResponse(raw)
    if len(seen) != expected:
        log.info("LLM returned %d prompts for %r, expected %d", len(seen), label.name, expected)
    return PromptSet(label, tuple(Prompt(t, label, PromptSource.LLM) for t in seen))


def _subject_pattern(subject: str) -> re.Pattern:
    return re.compile(r"(?<!\w)" + re.escape(subject) + r"(?!\w)", re.IGNORECASE)


def caption_replace(caption: str, coarse_subjects: Iterable[str], label: Label) -> Prompt:
    """Swap the earliest coarse subject in ``caption`` for the label name.

    Ties at the same position go to the longer subject.
    """
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    subjects = [s for s in coarse_subjects if s]
    best = None
    for subject in subjects:
        m = _subject_pattern(subject).search(caption)
        if m is None:
            continue
        key = (m.start(), -(m.end() - m.start()))
        if best is None or key < best[0]:
            best = (key, m)
    if best is None:
        raise NoSubjectFound(caption, subjects)
    m = best[1]
    text = caption[: m.start()] + label.name + caption[m.end() :]
    return Prompt(text, label, PromptSource.CAPTION)


def read_captions(path) -> list[tuple[str, str | None]]:
    """Captions file: one caption per line, optionally ``caption<TAB>image filename``."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            caption, _, filename = line.partition("\t")
            out.append((caption.strip(), filename.strip() or None))
    return out


def caption_prompts(
    captions: Iterable[str],
    label: Label,
    coarse_subjects: Sequence[str] = DEFAULT_COARSE_SUBJECTS,
) -> PromptSet:
    """Rewrite every caption that mentions a coarse subject; others are dropped."""
    seen: dict[str, Prompt] = {}
    dropped = 0
    for caption in captions:
        try:
            p = caption_replace(caption, coarse_subjects, label)
        except NoSubjectFound:
            dropped += 1
            continue
        seen.setdefault(p.text, p)
    if dropped:
        log.info("dropped %d captions without a coarse subject for %r", dropped, label.name)
    if not seen:
        raise NoSubjectFound("<all captions>", coarse_subjects)
    return PromptSet(label, tuple(seen.values()))


def captions_for_label(path, label: Label) -> list[str]:
    """Captions from a shared file, or from ``<dir>/<label name>.txt``."""
    path = Path(path)
    if path.is_dir():
        path = path / f"{label.name}.txt"
    return [c for c, _ in read_captions(path)]


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs)


def animacy_scores(store: WordVectorStore, lex: AnimacyLexicon, label: Label) -> tuple[float, float]:
    """(average similarity to living words, average similarity to non-living words)."""
    x = store.vector(label.name)
    v_p = [cosine_vectors(store.vector(w), x) for w in lex.living_words]
    v_n = [cosine_vectors(store.vector(w), x) for w in lex.nonliving_words]
    return _mean(v_p), _mean(v_n)


def classify_animacy(store: WordVectorStore, lex: AnimacyLexicon, label: Label) -> Animacy:
    living, nonliving = animacy_scores(store, lex, label)
    return Animacy.LIVING if living > nonliving else Animacy.NONLIVING


def insert_modifier(text: str, label: Label, modifier: str) -> str:
    """Replace the first (case-insensitive) mention of the label with ``modifier label``."""
    m = re.search(re.escape(label.name), text, re.IGNORECASE)
    if m is None:
        raise ValueError(f"prompt {text!r} does not mention label {label.name!r}")
    return text[: m.start()] + f"{modifier} {label.name}" + text[m.end() :]


def diversify(
    store: WordVectorStore,
    lex: AnimacyLexicon,
    label: Label,
    base: Prompt | None = None,
) -> PromptSet:
    """One variant per modifier of the label's animacy class.

    With no ``base`` the variants are bare phrases ("female lion"); with a
    base prompt the label inside it is replaced ("a photo of one female lion").
    """
    animacy = classify_animacy(store, lex, label)
    text = label.name if base is None else base.text
    out = [
        Prompt(insert_modifier(text, label, m), label, PromptSource.DIVERSIFIED)
        for m in lex.modifiers(animacy)
    ]
    return PromptSet(label, tuple(out))
