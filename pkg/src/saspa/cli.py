"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from .dataset import load_dataset
from .edges import CannyDetector, read_image, resize_shortest_side, save_edge_map
from .errors import SaspaError, ValidationError
from .filtering import FilterConfig, apply_filter_pipeline
from .generation import DatasetInputs, GenerationParams, execute_jobs, get_backend, plan_baseline_jobs, plan_saspa_jobs
from .manifest import AugmentationManifest, read_manifest, write_manifest
from .pipeline import PipelineConfig, compute_run_metrics, run_pipeline
from .plotting import render_report
from .prompts import (
    DEFAULT_ARTISTS,
    FixtureClient,
    append_artistic_styles,
    build_prompt_instruction,
    caption_pool,
    generate_prompt_pool,
    ingest_prompt_pool,
    read_prompt_file,
)
from .scorers import build_scorers
from .training import ReplacementPolicy, get_trainer, resolve_alpha, run_training
from .utils import stable_digest

log = logging.getLogger("saspa")

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _pool(args, d=None):
    if getattr(args, "source", "fixture") == "captions":
        if d is None:
            raise ValidationError("--source captions needs --dataset")
        pool = caption_pool(d)
    else:
        meta = args.meta_class or (d.meta_class if d else None)
        if not meta:
            raise ValidationError("give --meta-class or --dataset")
        if args.prompts:
            pool = ingest_prompt_pool(read_prompt_file(args.prompts), meta)
        else:
            pool = generate_prompt_pool(meta, FixtureClient(meta))
    if args.artists:
        artists = DEFAULT_ARTISTS if args.artists == ["default"] else args.artists
        pool = append_artistic_styles(pool, artists, args.seed)
    return pool


def cmd_prompts(args):
    if args.instruction:
        print(build_prompt_instruction(args.meta_class or load_dataset(args.dataset).meta_class))
        return
    d = load_dataset(args.dataset) if args.dataset else None
    pool = _pool(args, d)
    lines = [json.dumps(asdict(t), sort_keys=True) for t in pool.templates]
    if args.out:
        Path(args.out).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
        print(f"wrote {len(lines)} templates to {args.out} ({len(pool.rejected)} rejected, {pool.styled_count} styled)")
    else:
        print("\n".join(lines))


def cmd_edges(args):
    d = load_dataset(args.dataset)
    detector = CannyDetector(args.low, args.high)
    for img in d.train:
        save_edge_map(detector(resize_shortest_side(read_image(d.resolve_path(img))), img.id), args.out)
    print(f"wrote {len(d.train)} edge maps to {args.out}")


def cmd_generate(args):
    d = load_dataset(args.dataset)
    pool = _pool(args, d)
    params = GenerationParams(inference_steps=args.steps, guidance_scale=args.guidance,
                              conditioning_scale=args.conditioning_scale)
    if args.method in ("saspa", "saspa_no_subject"):
        jobs = plan_saspa_jobs(d, pool, args.M, args.seed, use_subject=args.method == "saspa", params=params)
    else:
        jobs = plan_baseline_jobs(d, pool, args.M, args.seed, args.method, args.strength, params=params)
    out = Path(args.out)
    m = read_manifest(out) if out.exists() else AugmentationManifest(d.name)
    result = execute_jobs(
        jobs, get_backend(args.backend, args.url), m, DatasetInputs(d, args.edges), out.parent,
        max_in_flight=args.max_in_flight, retries=args.retries,
        persist=lambda mm: write_manifest(mm, out),
    )
    result.manifest.log_stage("generate", stable_digest([j.aug_id for j in jobs]))
    write_manifest(result.manifest, out)
    print(f"{result.generated} generated, {result.skipped} skipped, {len(result.failures)} failed -> {out}")
    if result.failures:
        raise SaspaError(f"{len(result.failures)} job(s) failed permanently")


def cmd_filter(args):
    d = load_dataset(args.dataset)
    m = read_manifest(args.manifest)
    cfg = FilterConfig.for_shots(
        args.shots, use_semantic=args.semantic, use_topk=args.topk is not None and not args.no_topk,
        k=args.topk or 10, alternative=args.alternative,
    )
    scorers = build_scorers(args.scorer, d, args.seed, need_thresholds=cfg.alternative == "alia")
    m, report = apply_filter_pipeline(m, scorers, cfg)
    m.log_stage("filter", stable_digest({"filter": cfg.to_dict(), "scorer": args.scorer}))
    write_manifest(m, args.manifest)
    doc = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(doc + "\n", encoding="utf-8")
    print(doc)


def cmd_train(args):
    d = load_dataset(args.dataset)
    m = read_manifest(args.manifest)
    alpha = resolve_alpha(d.name, args.regime, args.alpha)
    run_log = run_training(d, m, ReplacementPolicy(alpha, 2, args.seed), get_trainer(args.trainer),
                           args.epochs, args.log)
    mean = sum(e["synthetic_fraction"] for e in run_log) / max(1, len(run_log))
    print(f"{len(run_log)} epochs, alpha={alpha:g}, mean synthetic fraction {mean:.4f}")


def cmd_metrics(args):
    d = load_dataset(args.dataset)
    m = read_manifest(args.manifest)
    result = compute_run_metrics(d, m, Path(args.manifest).parent)
    doc = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(doc + "\n", encoding="utf-8")
    print(doc)


def _parse_value(text: str):
    return yaml.safe_load(text)


def cmd_run(args):
    cfg = PipelineConfig.load(args.config)
    overrides = {}
    for key in ("seed", "M", "method", "scorer", "trainer", "shots"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.backend:
        overrides["backend.name"] = args.backend
    if args.out_dir:
        overrides["output_dir"] = str(Path(args.out_dir).resolve())
    for item in args.set or ():
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = _parse_value(value)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    report = run_pipeline(cfg)
    for stage, status in report.stages.items():
        print(f"{stage:>9}: {status}")
    c = report.counts
    print(f"jobs={c['jobs']} generated={c['generated']} kept={c['kept']} dropped={c['dropped']} "
          f"failed={c['failed']} -> {cfg.output_dir}")
    if report.failures:
        raise SaspaError(f"{len(report.failures)} job(s) failed permanently")


def cmd_report(args):
    out = Path(args.out_dir)
    path = out / "report.json"
    if not path.is_file():
        raise ValidationError(f"no report.json in {out}")
    report = json.loads(path.read_text())
    run_log_path = out / "run_log.jsonl"
    run_log = None
    if run_log_path.exists():
        run_log = [json.loads(ln) for ln in run_log_path.read_text().splitlines() if ln.strip()]
    for p in render_report(report, out, run_log):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="saspa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def prompt_opts(sp):
        sp.add_argument("--meta-class")
        sp.add_argument("--prompts", help="file with one raw prompt per line (default: shipped fixture)")
        sp.add_argument("--source", choices=["fixture", "captions"], default="fixture")
        sp.add_argument("--artists", nargs="*", help="append artistic styles; 'default' = van Gogh, Monet, Picasso")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("prompts", help="build a prompt pool")
    sp.add_argument("--dataset")
    prompt_opts(sp)
    sp.add_argument("--instruction", action="store_true", help="print the LLM instruction and exit")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_prompts)

    sp = sub.add_parser("edges", help="extract Canny edge maps for the train split")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--low", type=float)
    sp.add_argument("--high", type=float)
    sp.set_defaults(func=cmd_edges)

    sp = sub.add_parser("generate", help="plan and execute generation jobs")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--method", default="saspa",
                    choices=["saspa", "saspa_no_subject", "text2img", "img2img", "edge_plus_img2img"])
    sp.add_argument("--M", type=int, default=2)
    sp.add_argument("--strength", type=float)
    sp.add_argument("--steps", type=int, default=30)
    sp.add_argument("--guidance", type=float, default=7.5)
    sp.add_argument("--conditioning-scale", type=float, default=0.75)
    sp.add_argument("--backend", default="mock")
    sp.add_argument("--url")
    sp.add_argument("--edges", help="directory of cached edge maps")
    sp.add_argument("--max-in-flight", type=int, default=4)
    sp.add_argument("--retries", type=int, default=2)
    sp.add_argument("--out", required=True, help="manifest path; images go beside it")
    prompt_opts(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("filter", help="filter pending augmentations")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--semantic", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--topk", type=int, default=10)
    sp.add_argument("--no-topk", action="store_true")
    sp.add_argument("--alternative", choices=["none", "alia", "clip_label"], default="none")
    sp.add_argument("--scorer", default="hash")
    sp.add_argument("--shots", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("train", help="feed epoch plans to a trainer")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--regime", choices=["full", "few_shot", "high"], default="full")
    sp.add_argument("--epochs", type=int, default=140)
    sp.add_argument("--trainer", default="count")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--log")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("metrics", help="FID and diversity of kept augmentations")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("run", help="run the full pipeline from a config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--M", type=int)
    sp.add_argument("--method")
    sp.add_argument("--backend")
    sp.add_argument("--scorer")
    sp.add_argument("--trainer")
    sp.add_argument("--shots", type=int)
    sp.add_argument("--out-dir")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="render figures and CSV tables from a run directory")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SaspaError, OSError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
