"""Planning and executing generation jobs against pluggable backends."""

from .backends import (
    BACKEND_URL_ENV,
    GenerationBackend,
    GenerationRequest,
    InProcessBackend,
    MockBackend,
    WireBackend,
    get_backend,
    make_wire_handler,
)
from .executor import DatasetInputs, ExecutionResult, JobFailure, execute_jobs
from .params import (
    DEFAULT_CONDITIONING_SCALE,
    DEFAULT_GUIDANCE,
    DEFAULT_M,
    DEFAULT_STEPS,
    EDGE_IMG2IMG_STRENGTH,
    REAL_GUIDANCE_STRENGTH,
    SDEDIT_STRENGTH,
    GenerationJob,
    GenerationParams,
)
from .planner import plan_baseline_jobs, plan_saspa_jobs

__all__ = [
    "BACKEND_URL_ENV",
    "DEFAULT_CONDITIONING_SCALE",
    "DEFAULT_GUIDANCE",
    "DEFAULT_M",
    "DEFAULT_STEPS",
    "EDGE_IMG2IMG_STRENGTH",
    "REAL_GUIDANCE_STRENGTH",
    "SDEDIT_STRENGTH",
    "DatasetInputs",
    "ExecutionResult",
    "GenerationBackend",
    "GenerationJob",
    "GenerationParams",
    "GenerationRequest",
    "InProcessBackend",
    "JobFailure",
    "MockBackend",
    "WireBackend",
    "execute_jobs",
    "get_backend",
    "make_wire_handler",
    "plan_baseline_jobs",
    "plan_saspa_jobs",
]
