"""Prompt pool construction: LLM instruction, ingestion, artistic styling, instantiation."""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

from .dataset import DatasetDescriptor
from .errors import PromptError

logger = logging.getLogger(__name__)

SLOT = "{}"
ARTISTIC_PREFIX = ", a painting of "
DEFAULT_ARTISTS = ("van Gogh", "Monet", "Picasso")
DEFAULT_POOL_SIZE = 100

_INSTRUCTION = (
    "Generate {n} prompts for the class {meta} to use in a text-to-image model. "
    "Each prompt should:\n"
    "- Include the word {meta} to ensure the image focuses on this object.\n"
    "- Ensure diversity in each prompt by varying environmental settings, such as weather "
    "and time of day. You can include subtle enhancements like vegetation or small objects "
    "to add depth to the scene, ensuring these elements do not narrowly define the {meta} "
    "beyond its broad classification.\n"
    "- The prompts should meet the specified quantity requirement."
)


@dataclass(frozen=True)
class PromptTemplate:
    raw_text: str
    artistic_suffix: str | None = None
    origin: str = "llm_pool"
    # caption templates are bound to the image they describe
    image_id: str | None = None

    def __post_init__(self):
        if self.raw_text.count(SLOT) != 1:
            raise PromptError(f"template must contain exactly one {SLOT} slot: {self.raw_text!r}")
        if self.artistic_suffix is not None and not self.artistic_suffix.startswith(ARTISTIC_PREFIX):
            raise PromptError(f"artistic suffix must start with {ARTISTIC_PREFIX!r}")
        if self.origin not in ("llm_pool", "caption"):
            raise PromptError(f"unknown template origin {self.origin!r}")


@dataclass(frozen=True)
class PromptPool:
    meta_class: str
    templates: tuple[PromptTemplate, ...]
    artistic_fraction: float = 0.0
    rejected: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise PromptError("prompt pool is empty")

    def __len__(self) -> int:
        return len(self.templates)

    @property
    def is_caption_pool(self) -> bool:
        return all(t.origin == "caption" for t in self.templates)

    @property
    def styled_count(self) -> int:
        return sum(t.artistic_suffix is not None for t in self.templates)

    def for_image(self, image_id: str) -> PromptTemplate:
        for t in self.templates:
            if t.image_id == image_id:
                return t
        raise PromptError(f"no caption template for image {image_id!r}")


class PromptClient(Protocol):
    """Anything that answers an instruction with one prompt per line (an LLM, a fixture)."""

    def complete(self, instruction: str) -> list[str]: ...


def build_prompt_instruction(meta_class: str, n: int = DEFAULT_POOL_SIZE) -> str:
    if not meta_class:
        raise PromptError("meta_class must be non-empty")
    return _INSTRUCTION.format(n=n, meta=meta_class)


def ingest_prompt_pool(
    raw_prompts: Sequence[str], meta_class: str, slot_style: str = "prefix"
) -> PromptPool:
    """Turn raw LLM prompts into templates.

    The first case-insensitive occurrence of the meta-class word becomes the subject
    slot: ``"prefix"`` style writes ``"{} <meta-lowercase>"``, ``"replace"`` writes ``"{}"``.
    Prompts without the meta-class word are rejected and reported.
    """
    if not raw_prompts:
        raise PromptError("raw_prompts must be non-empty")
    if not meta_class:
        raise PromptError("meta_class must be non-empty")
    if slot_style not in ("prefix", "replace"):
        raise PromptError(f"unknown slot style {slot_style!r}")

    pattern = re.compile(re.escape(meta_class), re.IGNORECASE)
    fill = f"{SLOT} {meta_class.lower()}" if slot_style == "prefix" else SLOT
    templates, rejected = [], []
    for raw in raw_prompts:
        text = raw.strip()
        match = pattern.search(text)
        if not text or match is None or "{" in text or "}" in text:
            rejected.append(raw)
            continue
        templates.append(PromptTemplate(text[: match.start()] + fill + text[match.end():]))
    if rejected:
        logger.warning("rejected %d prompt(s) lacking %r", len(rejected), meta_class)
    if not templates:
        raise PromptError(f"all {len(rejected)} prompts rejected: none mention {meta_class!r}")
    return PromptPool(meta_class, tuple(templates), 0.0, tuple(rejected))


def append_artistic_styles(pool: PromptPool, artists: Sequence[str], seed: int) -> PromptPool:
    if not artists:
        raise PromptError("artists must be non-empty")
    if pool.styled_count:
        raise PromptError("pool is already styled")
    rng = random.Random(seed)
    n = len(pool.templates)
    chosen = rng.sample(range(n), n // 2)
    templates = list(pool.templates)
    for i in sorted(chosen):
        artist = rng.choice(list(artists))
        templates[i] = replace(templates[i], artistic_suffix=ARTISTIC_PREFIX + artist)
    return replace(pool, templates=tuple(templates), artistic_fraction=0.5)


def instantiate_prompt(t: PromptTemplate, sub_class: str) -> str:
    if not sub_class:
        raise PromptError("sub_class must be non-empty")
    text = t.raw_text.replace(SLOT, sub_class, 1)
    return text + (t.artistic_suffix or "")


def caption_pool(d: DatasetDescriptor) -> PromptPool:
    templates = []
    for img in d.train:
        if not img.caption:
            raise PromptError(f"train image {img.id!r} has no caption")
        caption = img.caption.replace("{", "(").replace("}", ")")
        templates.append(PromptTemplate(f"{SLOT}, {caption}", origin="caption", image_id=img.id))
    return PromptPool(d.meta_class, tuple(templates))


# -- sources -----------------------------------------------------------------


def read_prompt_file(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def write_prompt_file(lines: Sequence[str], path) -> None:
    Path(path).write_text("".join(f"{ln}\n" for ln in lines), encoding="utf-8")


def available_fixtures() -> list[str]:
    root = resources.files("saspa") / "data" / "prompts"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


class FixtureClient:
    """Offline stand-in for the LLM: returns the shipped prompt list for a meta-class."""

    def __init__(self, meta_class: str):
        self.meta_class = meta_class
        name = meta_class.lower()
        if name not in available_fixtures():
            raise PromptError(
                f"no prompt fixture for meta-class {meta_class!r}; have {available_fixtures()}"
            )
        self._resource = resources.files("saspa") / "data" / "prompts" / f"{name}.txt"

    def complete(self, instruction: str) -> list[str]:
        text = self._resource.read_text(encoding="utf-8")
        return [ln.strip() for ln in text.splitlines() if ln.strip()]


def generate_prompt_pool(meta_class: str, client: PromptClient, slot_style: str = "prefix") -> PromptPool:
    raw = client.complete(build_prompt_instruction(meta_class))
    return ingest_prompt_pool(raw, meta_class, slot_style=slot_style)
