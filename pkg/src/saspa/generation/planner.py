"""Job planning for SaSPA and the generative baselines."""

from __future__ import annotations

import random
from dataclasses import replace

from ..dataset import DatasetDescriptor
from ..errors import PlanningError
from ..prompts import PromptPool, instantiate_prompt
from ..utils import derive_seed
from .params import (
    DEFAULT_M,
    GenerationJob,
    GenerationParams,
)

BASELINE_METHODS = ("text2img", "img2img", "edge_plus_img2img")


def _job_id(index: int) -> str:
    return f"job-{index:06d}"


def _check_inputs(d: DatasetDescriptor, pool: PromptPool, M: int) -> None:
    if not d.split("train"):
        raise PlanningError("train split is empty")
    if pool is None or not pool.templates:
        raise PlanningError("prompt pool is empty")
    if M < 1:
        raise PlanningError("M must be >= 1")


def _pick_prompts(rng: random.Random, pool: PromptPool, image_id: str, M: int, with_replacement: bool):
    if pool.is_caption_pool:
        return [pool.for_image(image_id)] * M
    templates = list(pool.templates)
    if with_replacement:
        return [rng.choice(templates) for _ in range(M)]
    return _draw_cycling(rng, templates, M)


def _draw_cycling(rng: random.Random, items: list, M: int) -> list:
    """Sample without replacement, starting a fresh round once ``items`` is exhausted."""
    out: list = []
    while len(out) < M:
        out.extend(rng.sample(items, min(len(items), M - len(out))))
    return out


def plan_saspa_jobs(
    d: DatasetDescriptor,
    pool: PromptPool,
    M: int = DEFAULT_M,
    seed: int = 0,
    use_subject: bool = True,
    params: GenerationParams | None = None,
    reference_mode: str = "other",
    prompts_with_replacement: bool = True,
    references_with_replacement: bool = False,
) -> list[GenerationJob]:
    """Plan ``M`` edge-conditioned jobs for every train image.

    Each job pairs the image's edges with a random pool prompt and, when
    ``use_subject`` is set, a reference image of the same sub-class that is not the
    source (the source itself only when its class has a single train image).
    ``reference_mode="self"`` forces reference == source for every job.
    """
    _check_inputs(d, pool, M)
    if reference_mode not in ("other", "self"):
        raise PlanningError(f"unknown reference mode {reference_mode!r}")
    params = params or GenerationParams()
    if params.strength is not None:
        params = replace(params, strength=None)
    method = "saspa" if use_subject else "saspa_no_subject"
    subject_texts = (d.meta_class, d.meta_class) if use_subject else None
    by_class = d.train_by_class()
    rng = random.Random(seed)

    jobs = []
    for img in d.train:
        templates = _pick_prompts(rng, pool, img.id, M, prompts_with_replacement)
        if not use_subject:
            refs = [None] * M
        elif reference_mode == "self":
            refs = [img.id] * M
        else:
            candidates = [i for i in by_class[img.sub_class] if i != img.id] or [img.id]
            if references_with_replacement:
                refs = [rng.choice(candidates) for _ in range(M)]
            else:
                refs = _draw_cycling(rng, candidates, M)
        name = d.sub_classes[img.sub_class]
        for template, ref in zip(templates, refs):
            index = len(jobs)
            jobs.append(
                GenerationJob(
                    job_id=_job_id(index),
                    method=method,
                    slot_image_id=img.id,
                    prompt_text=instantiate_prompt(template, name),
                    sub_class=img.sub_class,
                    seed=derive_seed(seed, index),
                    params=params,
                    source_image_id=img.id,
                    reference_image_id=ref,
                    subject_texts=subject_texts,
                )
            )
    return jobs


def plan_baseline_jobs(
    d: DatasetDescriptor,
    pool: PromptPool,
    M: int = DEFAULT_M,
    seed: int = 0,
    method: str = "img2img",
    strength: float | None = None,
    params: GenerationParams | None = None,
    prompts_with_replacement: bool = True,
) -> list[GenerationJob]:
    """Plan text-to-image, Img2Img (SDEdit) or edge+Img2Img jobs, ``M`` per train image."""
    _check_inputs(d, pool, M)
    if method not in BASELINE_METHODS:
        raise PlanningError(f"method must be one of {BASELINE_METHODS}, got {method!r}")
    params = params or GenerationParams()
    if method == "text2img":
        params = replace(params, strength=None, resolution_rule="fixed_512")
    else:
        strength = strength if strength is not None else params.strength
        if strength is None:
            raise PlanningError(f"{method} requires a strength")
        params = replace(params, strength=strength)

    rng = random.Random(seed)
    jobs = []
    for img in d.train:
        templates = _pick_prompts(rng, pool, img.id, M, prompts_with_replacement)
        name = d.sub_classes[img.sub_class]
        for template in templates:
            index = len(jobs)
            jobs.append(
                GenerationJob(
                    job_id=_job_id(index),
                    method=method,
                    slot_image_id=img.id,
                    prompt_text=instantiate_prompt(template, name),
                    sub_class=img.sub_class,
                    seed=derive_seed(seed, index),
                    params=params,
                    source_image_id=None if method == "text2img" else img.id,
                )
            )
    return jobs
