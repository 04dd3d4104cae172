"""End-to-end runs: prompts, edges, plan, generate, filter, train, metrics.

Each stage records a digest of everything it depends on in the manifest's stage
log. A rerun skips any stage whose digest is already logged and whose outputs
exist, so interrupted runs resume and completed runs are no-ops.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .dataset import DatasetDescriptor, load_dataset, make_few_shot_subset
from .edges import CannyDetector, edge_map_path, read_image, resize_shortest_side, save_edge_map
from .errors import ConfigError, SaspaError, StageError
from .filtering import FilterConfig, apply_filter_pipeline
from .generation import (
    DatasetInputs,
    GenerationJob,
    GenerationParams,
    execute_jobs,
    get_backend,
    plan_baseline_jobs,
    plan_saspa_jobs,
)
from .generation.backends import BACKEND_NAMES
from .generation.params import METHODS
from .manifest import AugmentationManifest, read_manifest, write_manifest
from .metrics import ColorHistogramFeatures, DiversityPair, FeatureSet, PixelDistance, fid, lpips_diversity, metrics_cell
from .prompts import (
    DEFAULT_ARTISTS,
    FixtureClient,
    PromptPool,
    PromptTemplate,
    append_artistic_styles,
    caption_pool,
    generate_prompt_pool,
    ingest_prompt_pool,
    read_prompt_file,
)
from .scorers import build_scorers
from .training import (
    FEW_SHOT_EPOCHS,
    HYPERPARAMETERS,
    ReplacementPolicy,
    dataset_key,
    get_trainer,
    resolve_alpha,
    run_training,
    TRAINERS,
)
from .utils import atomic_write_text, canonical_json, stable_digest

logger = logging.getLogger(__name__)

STAGES = ("prompts", "edges", "plan", "generate", "filter", "train", "metrics")
SKIPPED = "skipped (up-to-date)"
DONE = "done"


@dataclass
class PromptSource:
    source: str = "fixture"  # fixture | file | captions
    path: str | None = None
    artists: list[str] | None = None
    slot_style: str = "prefix"


@dataclass
class BackendConfig:
    name: str = "mock"
    url: str | None = None
    max_in_flight: int = 4
    retries: int = 2


@dataclass
class PolicyConfig:
    regime: str = "full"
    alpha: float | None = None
    epochs: int | None = None
    stop_augmentation_epoch: int | None = None


@dataclass
class PipelineConfig:
    dataset: str
    output_dir: str = "saspa_out"
    method: str = "saspa"
    strength: float | None = None
    reference_mode: str = "other"
    params: GenerationParams = field(default_factory=GenerationParams)
    prompts: PromptSource = field(default_factory=PromptSource)
    M: int = 2
    seed: int = 0
    shots: int | None = None
    filter: FilterConfig = field(default_factory=FilterConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    scorer: str = "hash"
    trainer: str = "count"
    edge_low: float | None = None
    edge_high: float | None = None
    reproducible_timestamps: bool = True

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "PipelineConfig":
        doc = dict(doc or {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "dataset" not in doc:
            raise ConfigError("config needs a 'dataset' path")
        nested = {
            "params": GenerationParams,
            "prompts": PromptSource,
            "filter": FilterConfig,
            "policy": PolicyConfig,
            "backend": BackendConfig,
        }
        try:
            for key, typ in nested.items():
                if key in doc and isinstance(doc[key], dict):
                    doc[key] = typ(**doc[key])
            cfg = cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if base_dir is not None:
            base = Path(base_dir)
            cfg.dataset = str(base / cfg.dataset) if not Path(cfg.dataset).is_absolute() else cfg.dataset
            if not Path(cfg.output_dir).is_absolute():
                cfg.output_dir = str(base / cfg.output_dir)
            if cfg.prompts.path and not Path(cfg.prompts.path).is_absolute():
                cfg.prompts.path = str(base / cfg.prompts.path)
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["filter"] = self.filter.to_dict()
        return out

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply dotted-key overrides such as ``{"backend.name": "wire", "M": 4}``."""
        doc = self.to_dict()
        for key, value in overrides.items():
            target = doc
            parts = key.split(".")
            for part in parts[:-1]:
                if not isinstance(target.get(part), dict):
                    raise ConfigError(f"unknown config key {key!r}")
                target = target[part]
            if parts[-1] not in target:
                raise ConfigError(f"unknown config key {key!r}")
            target[parts[-1]] = value
        return PipelineConfig.from_dict(doc)

    def validate(self) -> "PipelineConfig":
        """Resolve every referenced file and name before anything runs."""
        if not Path(self.dataset).is_file():
            raise ConfigError(f"dataset descriptor not found: {self.dataset}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method in ("img2img", "edge_plus_img2img") and self.strength is None and self.params.strength is None:
            raise ConfigError(f"method {self.method} needs a strength")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.prompts.source not in ("fixture", "file", "captions"):
            raise ConfigError(f"unknown prompt source {self.prompts.source!r}")
        if self.prompts.source == "file" and not (self.prompts.path and Path(self.prompts.path).is_file()):
            raise ConfigError(f"prompt file not found: {self.prompts.path}")
        if self.backend.name not in BACKEND_NAMES:
            raise ConfigError(f"unknown backend {self.backend.name!r}")
        if self.trainer not in TRAINERS:
            raise ConfigError(f"unknown trainer {self.trainer!r}")
        if not (self.scorer in ("hash", "keep_all") or self.scorer.startswith("table:")):
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        if self.scorer.startswith("table:") and not Path(self.scorer[6:]).is_file():
            raise ConfigError(f"scorer table not found: {self.scorer[6:]}")
        if self.policy.regime not in ("full", "few_shot", "high"):
            raise ConfigError(f"unknown policy regime {self.policy.regime!r}")
        return self


@dataclass
class PipelineReport:
    dataset: str
    method: str
    seed: int
    config_digest: str
    stages: dict[str, str] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    filter: dict | None = None
    filter_config: dict | None = None
    alpha: float = 0.0
    epochs: int = 0
    epoch_plan_lengths: list[int] = field(default_factory=list)
    metrics: dict | None = None
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class _Run:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.manifest_path = self.out / "manifest.jsonl"
        self.edge_dir = self.out / "edges"
        self.latest: AugmentationManifest | None = None

    # -- shared helpers --------------------------------------------------------

    def persist(self, m: AugmentationManifest) -> None:
        self.latest = m
        write_manifest(m, self.manifest_path)

    def up_to_date(self, m: AugmentationManifest, stage: str, digest: str, *outputs: Path) -> bool:
        entry = m.last_stage(stage)
        return entry is not None and entry.params_digest == digest and all(p.exists() for p in outputs)

    def log(self, m: AugmentationManifest, stage: str, digest: str) -> None:
        m.log_stage(stage, digest, reproducible=self.cfg.reproducible_timestamps)
        self.persist(m)

    # -- stages ----------------------------------------------------------------

    def load_dataset(self) -> DatasetDescriptor:
        d = load_dataset(self.cfg.dataset)
        if self.cfg.shots is not None:
            d = make_few_shot_subset(d, self.cfg.shots, self.cfg.seed)
        return d

    def build_pool(self, d: DatasetDescriptor) -> PromptPool:
        src = self.cfg.prompts
        if src.source == "captions":
            pool = caption_pool(d)
        elif src.source == "file":
            pool = ingest_prompt_pool(read_prompt_file(src.path), d.meta_class, src.slot_style)
        else:
            pool = generate_prompt_pool(d.meta_class, FixtureClient(d.meta_class), src.slot_style)
        if src.artists:
            artists = DEFAULT_ARTISTS if src.artists == ["default"] else src.artists
            pool = append_artistic_styles(pool, artists, self.cfg.seed)
        return pool

    def plan(self, d: DatasetDescriptor, pool: PromptPool) -> list[GenerationJob]:
        cfg = self.cfg
        if cfg.method in ("saspa", "saspa_no_subject"):
            return plan_saspa_jobs(
                d, pool, cfg.M, cfg.seed, use_subject=cfg.method == "saspa",
                params=cfg.params, reference_mode=cfg.reference_mode,
            )
        return plan_baseline_jobs(d, pool, cfg.M, cfg.seed, cfg.method, cfg.strength, params=cfg.params)

    def alpha(self, d: DatasetDescriptor) -> float:
        p = self.cfg.policy
        return resolve_alpha(d.name, p.regime, p.alpha)

    def epochs(self, d: DatasetDescriptor) -> int:
        p = self.cfg.policy
        if p.epochs is not None:
            return p.epochs
        if p.regime == "few_shot" or self.cfg.shots is not None:
            return FEW_SHOT_EPOCHS
        key = dataset_key(d.name)
        return HYPERPARAMETERS[key].epochs if key in HYPERPARAMETERS else 140

    def filter_config(self) -> FilterConfig:
        return FilterConfig.for_shots(self.cfg.shots, **self.cfg.filter.to_dict())


def _edge_stage(run: _Run, d: DatasetDescriptor, m, report, digest):
    ids = [img.id for img in d.train]
    outputs = [edge_map_path(run.edge_dir, i) for i in ids]
    if run.up_to_date(m, "edges", digest, *outputs):
        report.stages["edges"] = SKIPPED
        return
    detector = CannyDetector(run.cfg.edge_low, run.cfg.edge_high)
    for img, path in zip(d.train, outputs):
        if path.exists():
            continue
        image = resize_shortest_side(read_image(d.resolve_path(img)))
        save_edge_map(detector(image, img.id), run.edge_dir)
    run.log(m, "edges", digest)
    report.stages["edges"] = DONE


def compute_run_metrics(d: DatasetDescriptor, m: AugmentationManifest, out_dir: Path) -> dict:
    features, distance = ColorHistogramFeatures(), PixelDistance()
    real_images = {img.id: resize_shortest_side(read_image(d.resolve_path(img))) for img in d.train}
    kept = [r for r in m.records if r.verdict == "kept"]
    result = metrics_cell(
        d.name, m.records[0].method if m.records else "none",
        providers={"features": features.config(), "distance": distance.config()},
    )
    if len(real_images) >= 2 and len(kept) >= 2:
        real_feats = FeatureSet(np.stack([features(im) for im in real_images.values()]), "real")
        synth = [read_image(out_dir / r.output_path) for r in kept]
        synth_feats = FeatureSet(np.stack([features(im) for im in synth]), "synthetic")
        result["fid"] = fid(real_feats, synth_feats)
    if kept:
        pairs = [
            DiversityPair(r.source_image_id, r.aug_id, distance(real_images[r.source_image_id], read_image(out_dir / r.output_path)))
            for r in kept
        ]
        result["diversity"] = lpips_diversity(pairs)
    return result


def run_pipeline(cfg: PipelineConfig, backend=None, scorers=None, trainer=None) -> PipelineReport:
    """Run (or resume) every stage for ``cfg``; returns a report of what happened.

    ``backend``, ``scorers`` and ``trainer`` override the named ones in the config.
    """
    cfg.validate()
    run = _Run(cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    try:
        d = run.load_dataset()
        pool = run.build_pool(d)
    except SaspaError as exc:
        raise ConfigError(str(exc)) from exc

    report = PipelineReport(d.name, cfg.method, cfg.seed, stable_digest(cfg.to_dict() | {"output_dir": None}))
    if run.manifest_path.exists():
        m = read_manifest(run.manifest_path)
        if m.dataset_name != d.name:
            raise ConfigError(f"manifest belongs to dataset {m.dataset_name!r}, not {d.name!r}")
    else:
        m = AugmentationManifest(d.name)
        run.persist(m)

    try:
        # prompts
        pool_doc = [asdict(t) for t in pool.templates]
        prompts_digest = stable_digest({"pool": pool_doc})
        prompts_path = run.out / "prompts.jsonl"
        if run.up_to_date(m, "prompts", prompts_digest, prompts_path):
            report.stages["prompts"] = SKIPPED
        else:
            atomic_write_text(prompts_path, "".join(canonical_json(t) + "\n" for t in pool_doc))
            run.log(m, "prompts", prompts_digest)
            report.stages["prompts"] = DONE

        # edges
        train_ids = list(d.split("train"))
        edges_digest = stable_digest({"train": train_ids, "low": cfg.edge_low, "high": cfg.edge_high})
        needs_edges = cfg.method in ("saspa", "saspa_no_subject", "edge_plus_img2img")
        if needs_edges:
            _edge_stage(run, d, m, report, edges_digest)
        else:
            report.stages["edges"] = "not needed"

        # plan
        jobs = run.plan(d, pool)
        plan_digest = stable_digest({"prompts": prompts_digest, "edges": edges_digest if needs_edges else None,
                                     "jobs": [j.aug_id for j in jobs]})
        jobs_path = run.out / "jobs.jsonl"
        if run.up_to_date(m, "plan", plan_digest, jobs_path):
            report.stages["plan"] = SKIPPED
        else:
            atomic_write_text(jobs_path, "".join(canonical_json(j.to_dict()) + "\n" for j in jobs))
            run.log(m, "plan", plan_digest)
            report.stages["plan"] = DONE

        # generate
        gen_digest = stable_digest({"plan": plan_digest, "backend": cfg.backend.name})
        failures_path = run.out / "failures.jsonl"
        present = m.aug_ids
        failed_before = []
        if failures_path.exists():
            failed_before = [json.loads(ln) for ln in failures_path.read_text().splitlines() if ln.strip()]
        if run.up_to_date(m, "generate", gen_digest) and all(
            j.aug_id in present or j.aug_id in {f["aug_id"] for f in failed_before} for j in jobs
        ):
            report.stages["generate"] = SKIPPED
            report.failures = failed_before
        else:
            be = backend or get_backend(cfg.backend.name, cfg.backend.url)
            result = execute_jobs(
                jobs, be, m, DatasetInputs(d, run.edge_dir if needs_edges else None), run.out,
                max_in_flight=cfg.backend.max_in_flight, retries=cfg.backend.retries, persist=run.persist,
            )
            m = result.manifest
            report.failures = [f.to_dict() for f in result.failures]
            atomic_write_text(failures_path, "".join(canonical_json(f) + "\n" for f in report.failures))
            run.log(m, "generate", gen_digest)
            report.stages["generate"] = DONE

        job_ids = {j.aug_id for j in jobs}
        records = [r for r in m.records if r.aug_id in job_ids]

        # filter
        fcfg = run.filter_config()
        report.filter_config = {**fcfg.to_dict(), "stages": fcfg.stages}
        filter_digest = stable_digest({"generate": gen_digest, "filter": fcfg.to_dict(), "scorer": cfg.scorer,
                                       "seed": cfg.seed})
        filter_path = run.out / "filter_report.json"
        if run.up_to_date(m, "filter", filter_digest, filter_path) and not m.pending():
            report.stages["filter"] = SKIPPED
            report.filter = json.loads(filter_path.read_text())
        elif not records:
            raise StageError("no augmentations to filter")
        else:
            if m.last_stage("filter") is not None and m.last_stage("filter").params_digest != filter_digest:
                m.reset_verdicts()
                run.log(m, "filter_reset", filter_digest)
            sc = scorers or build_scorers(cfg.scorer, d, cfg.seed, need_thresholds=fcfg.alternative == "alia")
            if m.pending():
                m, frep = apply_filter_pipeline(m, sc, fcfg)
                report.filter = frep.to_dict()
                atomic_write_text(filter_path, json.dumps(report.filter, indent=2, sort_keys=True) + "\n")
            else:
                report.filter = json.loads(filter_path.read_text())
            run.log(m, "filter", filter_digest)
            report.stages["filter"] = DONE

        # train
        alpha, epochs = run.alpha(d), run.epochs(d)
        report.alpha, report.epochs = alpha, epochs
        policy = ReplacementPolicy(alpha, cfg.M, cfg.seed)
        train_digest = stable_digest({"filter": filter_digest, "alpha": alpha, "epochs": epochs,
                                      "trainer": cfg.trainer, "stop": cfg.policy.stop_augmentation_epoch})
        log_path = run.out / "run_log.jsonl"
        if run.up_to_date(m, "train", train_digest, log_path):
            report.stages["train"] = SKIPPED
            run_log = [json.loads(ln) for ln in log_path.read_text().splitlines() if ln.strip()]
        else:
            tr = trainer or get_trainer(cfg.trainer)
            run_log = run_training(d, m, policy, tr, epochs, log_path, cfg.policy.stop_augmentation_epoch)
            run.log(m, "train", train_digest)
            report.stages["train"] = DONE
        report.epoch_plan_lengths = [
            e.get("trainer_metrics", {}).get("slots", len(train_ids)) for e in run_log
        ]

        # metrics
        metrics_digest = stable_digest({"filter": filter_digest})
        metrics_path = run.out / "metrics.json"
        if run.up_to_date(m, "metrics", metrics_digest, metrics_path):
            report.stages["metrics"] = SKIPPED
            report.metrics = json.loads(metrics_path.read_text())
        else:
            report.metrics = compute_run_metrics(d, m, run.out)
            atomic_write_text(metrics_path, json.dumps(report.metrics, indent=2, sort_keys=True) + "\n")
            run.log(m, "metrics", metrics_digest)
            report.stages["metrics"] = DONE
    except SaspaError:
        raise
    except Exception as exc:
        raise StageError(f"{type(exc).__name__}: {exc}") from exc
    finally:
        if run.latest is not None:
            run.persist(run.latest)

    records = [r for r in m.records if r.aug_id in {j.aug_id for j in jobs}]
    report.counts = {
        "train_images": len(train_ids),
        "jobs": len(jobs),
        "generated": len(records),
        "failed": len(report.failures),
        "kept": sum(r.verdict == "kept" for r in records),
        "dropped": sum(r.verdict == "dropped" for r in records),
    }
    write_report(report, run.out, run_log)
    return report


def write_report(report: PipelineReport, out_dir, run_log=None) -> Path:
    from .plotting import render_report

    out_dir = Path(out_dir)
    path = out_dir / "report.json"
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    render_report(report.to_dict(), out_dir, run_log)
    return path
