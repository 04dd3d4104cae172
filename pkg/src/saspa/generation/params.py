from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..utils import stable_digest

DEFAULT_STEPS = 30
DEFAULT_GUIDANCE = 7.5
DEFAULT_CONDITIONING_SCALE = 0.75
DEFAULT_M = 2
TEXT2IMG_SIZE = 512

REAL_GUIDANCE_STRENGTH = 0.15
SDEDIT_STRENGTH = 0.5
EDGE_IMG2IMG_STRENGTH = 0.85

METHODS = ("saspa", "saspa_no_subject", "text2img", "img2img", "edge_plus_img2img")
RESOLUTION_RULES = ("shortest_side_512", "fixed_512")


@dataclass(frozen=True)
class GenerationParams:
    inference_steps: int = DEFAULT_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE
    conditioning_scale: float = DEFAULT_CONDITIONING_SCALE
    strength: float | None = None
    resolution_rule: str = "shortest_side_512"
    sampler: str = "ddim"

    def __post_init__(self):
        if self.inference_steps < 1:
            raise ValueError("inference_steps must be >= 1")
        if self.guidance_scale < 0 or self.conditioning_scale < 0:
            raise ValueError("scales must be >= 0")
        if self.strength is not None and not 0.0 < self.strength <= 1.0:
            raise ValueError(f"strength must lie in (0, 1], got {self.strength}")
        if self.resolution_rule not in RESOLUTION_RULES:
            raise ValueError(f"unknown resolution rule {self.resolution_rule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        return stable_digest(self.to_dict())

    def wire(self) -> dict:
        out = {
            "steps": self.inference_steps,
            "guidance_scale": self.guidance_scale,
            "conditioning_scale": self.conditioning_scale,
            "sampler": self.sampler,
            "resolution_rule": self.resolution_rule,
        }
        if self.strength is not None:
            out["strength"] = self.strength
        return out

    @classmethod
    def from_wire(cls, doc: dict) -> "GenerationParams":
        return cls(
            inference_steps=int(doc.get("steps", DEFAULT_STEPS)),
            guidance_scale=float(doc.get("guidance_scale", DEFAULT_GUIDANCE)),
            conditioning_scale=float(doc.get("conditioning_scale", DEFAULT_CONDITIONING_SCALE)),
            strength=doc.get("strength"),
            resolution_rule=doc.get("resolution_rule", "shortest_side_512"),
            sampler=doc.get("sampler", "ddim"),
        )


@dataclass(frozen=True)
class GenerationJob:
    job_id: str
    method: str
    # the real training image this augmentation belongs to; also set for text2img
    slot_image_id: str
    prompt_text: str
    sub_class: int
    seed: int
    params: GenerationParams = field(default_factory=GenerationParams)
    source_image_id: str | None = None
    reference_image_id: str | None = None
    subject_texts: tuple[str, str] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "saspa":
            if self.reference_image_id is None or self.subject_texts is None:
                raise ValueError(f"{self.job_id}: saspa jobs need a reference image and subject texts")
        if self.method in ("img2img", "edge_plus_img2img") and self.params.strength is None:
            raise ValueError(f"{self.job_id}: {self.method} jobs need a strength")
        if self.method == "text2img" and self.source_image_id is not None:
            raise ValueError(f"{self.job_id}: text2img jobs take no source image")
        if self.method != "text2img" and self.source_image_id is None:
            raise ValueError(f"{self.job_id}: {self.method} jobs need a source image")

    @property
    def uses_edges(self) -> bool:
        return self.method in ("saspa", "saspa_no_subject", "edge_plus_img2img")

    @property
    def uses_init_image(self) -> bool:
        return self.method in ("img2img", "edge_plus_img2img")

    @property
    def aug_id(self) -> str:
        return stable_digest(
            {
                "source": self.slot_image_id,
                "method": self.method,
                "prompt": self.prompt_text,
                "reference": self.reference_image_id,
                "seed": self.seed,
                "params": self.params.digest,
            }
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["params"] = self.params.to_dict()
        out["subject_texts"] = list(self.subject_texts) if self.subject_texts else None
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "GenerationJob":
        doc = dict(doc)
        doc["params"] = GenerationParams(**doc["params"])
        if doc.get("subject_texts"):
            doc["subject_texts"] = tuple(doc["subject_texts"])
        return cls(**doc)
