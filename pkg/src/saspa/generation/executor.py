"""Concurrent, resumable execution of generation jobs."""

from __future__ import annotations

import logging
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..dataset import DatasetDescriptor
from ..edges import CannyDetector, EdgeDetector, edge_map_path, load_edge_map, read_image, resize_shortest_side, write_image
from ..errors import BackendError
from ..manifest import AugmentationManifest, AugmentationRecord
from .backends import GenerationBackend, GenerationRequest
from .params import GenerationJob

logger = logging.getLogger(__name__)


class DatasetInputs:
    """Resolves a job's image inputs from a dataset: resized source, edges, reference.

    Edge maps are read from ``edge_dir`` when cached there, otherwise extracted.
    """

    def __init__(self, d: DatasetDescriptor, edge_dir=None, detector: EdgeDetector | None = None):
        self.d = d
        self.edge_dir = Path(edge_dir) if edge_dir else None
        self.detector = detector or CannyDetector()
        self._index = d.by_id
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def image(self, image_id: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(image_id)
        if cached is None:
            cached = resize_shortest_side(read_image(self.d.resolve_path(self._index[image_id])))
            with self._lock:
                self._cache[image_id] = cached
        return cached

    def edges(self, image_id: str) -> np.ndarray:
        if self.edge_dir is not None and edge_map_path(self.edge_dir, image_id).is_file():
            return load_edge_map(self.edge_dir, image_id).data
        return self.detector(self.image(image_id), image_id).data

    def __call__(self, job: GenerationJob) -> GenerationRequest:
        return GenerationRequest(
            method=job.method,
            prompt=job.prompt_text,
            seed=job.seed,
            params=job.params,
            edge_map=self.edges(job.source_image_id) if job.uses_edges else None,
            init_image=self.image(job.source_image_id) if job.uses_init_image else None,
            reference_image=self.image(job.reference_image_id) if job.reference_image_id else None,
            subject_texts=job.subject_texts,
        )


@dataclass
class JobFailure:
    job_id: str
    aug_id: str
    attempts: int
    error: str

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "aug_id": self.aug_id, "attempts": self.attempts, "error": self.error}


@dataclass
class ExecutionResult:
    manifest: AugmentationManifest
    generated: int = 0
    skipped: int = 0
    failures: list[JobFailure] = field(default_factory=list)
    attempts: dict[str, int] = field(default_factory=dict)


def record_for(job: GenerationJob, output_path: str) -> AugmentationRecord:
    return AugmentationRecord(
        aug_id=job.aug_id,
        source_image_id=job.slot_image_id,
        sub_class=job.sub_class,
        prompt_text=job.prompt_text,
        reference_image_id=job.reference_image_id,
        method=job.method,
        params_digest=job.params.digest,
        seed=job.seed,
        output_path=output_path,
    )


def _run_one(job, backend, inputs, retries) -> tuple[np.ndarray | None, int, str | None]:
    attempts = 0
    while True:
        attempts += 1
        try:
            return backend.generate(inputs(job)), attempts, None
        except BackendError as exc:
            if not exc.retryable or attempts > retries:
                return None, attempts, str(exc)
            logger.info("%s attempt %d failed (%s); retrying", job.job_id, attempts, exc)
        except Exception as exc:  # input resolution errors are permanent
            return None, attempts, f"{type(exc).__name__}: {exc}"


def execute_jobs(
    jobs: list[GenerationJob],
    backend: GenerationBackend,
    manifest: AugmentationManifest,
    inputs: Callable[[GenerationJob], GenerationRequest],
    output_dir,
    max_in_flight: int = 4,
    retries: int = 2,
    persist: Callable[[AugmentationManifest], None] | None = None,
    persist_every: int = 50,
) -> ExecutionResult:
    """Run ``jobs`` against ``backend`` and append one pending record per success.

    Records are appended in job_id order whatever the completion order. Jobs whose
    aug_id is already in the manifest are skipped, so an interrupted run resumes.
    Images land in ``output_dir/images/<aug_id>.png``; record paths are relative
    to ``output_dir``.
    """
    info = backend.handshake()
    supported = frozenset(getattr(backend, "methods", ()) or info.get("methods", ()))
    missing = {j.method for j in jobs} - supported
    if missing:
        raise BackendError(f"backend {backend.name} does not support {sorted(missing)}")

    out = manifest.copy()
    result = ExecutionResult(out)
    done = out.aug_ids
    todo = []
    for job in sorted(jobs, key=lambda j: j.job_id):
        if job.aug_id in done:
            result.skipped += 1
        else:
            todo.append(job)
    output_dir = Path(output_dir)

    finished: dict[int, tuple] = {}
    next_emit = 0
    since_persist = 0

    def emit_ready():
        nonlocal next_emit, since_persist
        while next_emit in finished:
            job = todo[next_emit]
            image, attempts, error = finished.pop(next_emit)
            result.attempts[job.job_id] = attempts
            if image is None:
                logger.warning("%s failed permanently after %d attempt(s): %s", job.job_id, attempts, error)
                result.failures.append(JobFailure(job.job_id, job.aug_id, attempts, error))
            else:
                rel = f"images/{job.aug_id}.png"
                write_image(output_dir / rel, image)
                out.append([record_for(job, rel)])
                result.generated += 1
                since_persist += 1
            next_emit += 1
        if persist is not None and since_persist >= persist_every:
            persist(out)
            since_persist = 0

    try:
        with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
            pending = {}
            queue = iter(enumerate(todo))
            for index, job in queue:
                pending[pool.submit(_run_one, job, backend, inputs, retries)] = index
                if len(pending) >= max_in_flight:
                    break
            while pending:
                completed, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in completed:
                    finished[pending.pop(fut)] = fut.result()
                emit_ready()
                for index, job in queue:
                    pending[pool.submit(_run_one, job, backend, inputs, retries)] = index
                    if len(pending) >= max_in_flight:
                        break
        emit_ready()
    finally:
        # also on interrupt: whatever was emitted survives for the resume
        if persist is not None:
            persist(out)
    return result
