"""Command line interface for the morph generation and evaluation workbench.

Every subcommand prints the effective config hash and seed first, writes
its outputs under the configured output directory, and maps exceptions to
one machine-parsable stderr line (``<error-class>: <message>``) plus a
class-specific exit code.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
from pathlib import Path

from .adapters import AdapterStore, fine_tune
from .backends import (get_feature_extractor, get_generation_backend,
                       get_recognition_backend, get_scorer)
from .config import RunConfig
from .corpus import (LayoutDescriptor, Manifest, ingest, read_pairs,
                     select_pairs, write_pairs)
from .errors import BackendError, ConfigError, DatasetError, MorphbenchError
from .fsutil import atomic_write_text
from .genpipeline import (VARIANTS, build_request, finetune_config_for_variant,
                          run_batch)
from .identity import IdentityStore, extract_identity, representative_embedding
from .metrics.mapmatrix import SEMANTICS, MapMatrix, compute_map
from .metrics.quality import (QualityCache, aggregate_report, read_raw_csv,
                              score_quality, write_report)
from .metrics.scores import read_scores
from .metrics.thresholds import calibrate_thresholds
from .metrics.frechet import frechet_distance, moments_from_features
from .plotting import plot_map_heatmap, plot_score_distributions

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _manifest_path(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir) / "manifest.jsonl"


def _pairs_path(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir) / "pairs.csv"


def _load_manifest(cfg: RunConfig) -> Manifest:
    return Manifest.load(_manifest_path(cfg))


def _identity_store(cfg: RunConfig) -> IdentityStore:
    return IdentityStore(cfg.resolved_cache_root() / "identity")


def _adapter_store(cfg: RunConfig) -> AdapterStore:
    return AdapterStore(cfg.resolved_cache_root() / "adapters")


def _subject_images(manifest: Manifest, subject_id: str, count: int | None):
    records = manifest.subject_images(subject_id)
    if count is not None:
        records = records[:count]
    return [r.path for r in records], [r.image_id for r in records]


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def variant_from_filename(name: str) -> str | None:
    """Recover the variant tag embedded in a morph output filename."""
    parts = Path(name).stem.split("__")
    return parts[-3] if len(parts) >= 4 else None


def cmd_ingest(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not cfg.dataset_root:
        raise ConfigError("ingest needs dataset_root (config key or --dataset-root)")
    layout = LayoutDescriptor.from_dict(cfg.layout)
    manifest = ingest(cfg.dataset_root, layout, cfg.dataset)
    path = _manifest_path(cfg)
    manifest.save(path)
    reasons: dict[str, int] = {}
    for _, reason in manifest.excluded:
        reasons[reason] = reasons.get(reason, 0) + 1
    print(f"ingested {manifest.subject_count} subjects, "
          f"{manifest.image_count} images "
          f"({sum(reasons.values())} excluded) -> {path}")
    for reason in sorted(reasons):
        print(f"  excluded {reasons[reason]} ({reason})")
    return 0


def cmd_pairs(cfg: RunConfig, args: argparse.Namespace) -> int:
    manifest = _load_manifest(cfg)
    backend = get_recognition_backend(cfg.backend_frs)
    store = _identity_store(cfg)
    embeddings = {}
    for sid in sorted(manifest.subjects):
        paths, ids = _subject_images(manifest, sid, None)
        matrix = extract_identity(manifest.subjects[sid], paths, backend,
                                  image_ids=ids, store=store)
        embeddings[sid] = representative_embedding(matrix)
    pairs = select_pairs(manifest, embeddings, top_k=cfg.top_k,
                         max_pairs=cfg.max_pairs)
    path = _pairs_path(cfg)
    write_pairs(pairs, path)
    manifest.selection = {"top_k": cfg.top_k, "backend_frs": cfg.backend_frs,
                          "pairs": len(pairs)}
    manifest.save(_manifest_path(cfg))
    print(f"selected {len(pairs)} pairs -> {path}")
    return 0


def cmd_finetune(cfg: RunConfig, args: argparse.Namespace) -> int:
    manifest = _load_manifest(cfg)
    ablation = VARIANTS[cfg.variant]
    backend = get_generation_backend(cfg.backend_gen)
    ftcfg = finetune_config_for_variant(cfg.finetune, ablation)
    store = _adapter_store(cfg)
    for sid in sorted(manifest.subjects):
        paths, ids = _subject_images(manifest, sid,
                                     ablation.images_per_subject)
        fine_tune(manifest.subjects[sid], paths, ftcfg, backend,
                  image_ids=ids, store=store)
    print(f"fine-tuned adapters for {manifest.subject_count} subjects "
          f"(variant {cfg.variant}, config {ftcfg.config_hash()}) "
          f"-> {store.root}")
    return 0


def cmd_identity(cfg: RunConfig, args: argparse.Namespace) -> int:
    manifest = _load_manifest(cfg)
    ablation = VARIANTS[cfg.variant]
    backend = get_recognition_backend(cfg.backend_frs)
    store = _identity_store(cfg)
    for sid in sorted(manifest.subjects):
        paths, ids = _subject_images(manifest, sid,
                                     ablation.images_per_subject)
        extract_identity(manifest.subjects[sid], paths, backend,
                         image_ids=ids, store=store)
    print(f"extracted identities for {manifest.subject_count} subjects "
          f"(variant {cfg.variant}) -> {store.root}")
    return 0


def cmd_morph(cfg: RunConfig, args: argparse.Namespace) -> int:
    manifest = _load_manifest(cfg)
    pairs = read_pairs(_pairs_path(cfg))
    if not pairs:
        raise DatasetError(f"no pairs listed in {_pairs_path(cfg)}")
    ablation = VARIANTS[cfg.variant]
    backend = get_generation_backend(cfg.backend_gen)
    builder = functools.partial(
        build_request,
        ablation=ablation,
        manifest=manifest,
        identity_store=_identity_store(cfg),
        recognition_name=cfg.backend_frs,
        adapter_store=_adapter_store(cfg),
        generation_name=cfg.backend_gen,
        finetune_config=cfg.finetune,
        alpha=cfg.alpha,
        interp=cfg.interp,
        prompt=cfg.prompt,
        negative_prompt=cfg.negative_prompt,
        steps=cfg.steps,
        resolution=cfg.resolution,
        seed=cfg.seed,
        outputs=cfg.outputs)
    out_dir = Path(cfg.out_dir) / "morphs"
    manifest_path = Path(cfg.out_dir) / "runs" / f"{cfg.variant}.jsonl"
    report = run_batch(pairs, builder, backend, out_dir, manifest_path,
                       max_jobs=cfg.max_jobs)
    print(f"morph variant {cfg.variant}: ok={report.ok} "
          f"failed={report.failed} skipped={report.skipped} "
          f"({report.wall_seconds:.2f}s) -> {out_dir}")
    if report.failed:
        raise BackendError(
            f"{report.failed} output slot(s) failed; journal at {manifest_path}")
    return 0


def cmd_map(cfg: RunConfig, args: argparse.Namespace) -> int:
    scores_path = Path(args.scores) if args.scores else Path(cfg.out_dir) / "scores.csv"
    if not scores_path.is_file():
        raise DatasetError(f"score file not found: {scores_path}")
    score_set = read_scores(scores_path)
    thresholds = calibrate_thresholds(score_set, cfg.target_fmr)
    matrix = compute_map(score_set, thresholds, cfg.map_semantics)
    out = Path(cfg.out_dir)
    table_path = out / "map.csv"
    record_path = out / "map.json"
    atomic_write_text(table_path, matrix.to_table())
    atomic_write_text(record_path,
                      json.dumps(matrix.to_record(), indent=2) + "\n")
    sys.stdout.write(matrix.to_table())
    print(f"matrix over {matrix.morph_count} morphs -> {table_path}, {record_path}")
    return 0


def cmd_quality(cfg: RunConfig, args: argparse.Namespace) -> int:
    images_dir = Path(args.images) if args.images else Path(cfg.out_dir) / "morphs"
    if not images_dir.is_dir():
        raise DatasetError(f"image directory not found: {images_dir}")
    paths = _image_files(images_dir)
    if not paths:
        raise DatasetError(f"no images under {images_dir}")
    cache = QualityCache(cfg.resolved_cache_root() / "quality")
    samples: dict[tuple[str, str, str], list[float]] = {}
    failures: list = []
    for name in cfg.scorers:
        scorer = get_scorer(name)
        records = score_quality(paths, scorer, cache=cache)
        for rec in records:
            if not rec.ok:
                failures.append(rec)
                continue
            method = variant_from_filename(rec.path) or cfg.variant
            key = (scorer.name, method, cfg.dataset)
            samples.setdefault(key, []).append(rec.score)
    if not samples:
        raise BackendError(
            f"all {len(failures)} quality scores failed; nothing to aggregate")
    report = aggregate_report(samples)
    written = write_report(report, cfg.out_dir)
    if failures:
        lines = ["image_id,scorer,error"]
        lines += [f"{r.image_id},{r.scorer},{r.error}" for r in failures]
        fail_path = Path(cfg.out_dir) / "quality_failures.csv"
        atomic_write_text(fail_path, "\n".join(lines) + "\n")
        written.append(fail_path)
        log.warning("%d image(s) failed quality scoring", len(failures))
    for metric in report.metrics:
        sys.stdout.write(report.table(metric))
    print(f"scored {len(paths)} images with {len(cfg.scorers)} scorer(s), "
          f"{len(failures)} failure(s)")
    for path in written:
        print(f"  {path}")
    return 0


def cmd_fid(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.dir_a:
        paths_a = _image_files(Path(args.dir_a))
    else:
        manifest = _load_manifest(cfg)
        paths_a = [rec.path for sid in sorted(manifest.subjects)
                   for rec in manifest.subject_images(sid)]
    if args.dir_b:
        paths_b = _image_files(Path(args.dir_b))
    else:
        paths_b = _image_files(Path(cfg.out_dir) / "morphs")
    if len(paths_a) < 2 or len(paths_b) < 2:
        raise DatasetError(
            f"need at least two images per side, got {len(paths_a)} "
            f"and {len(paths_b)}")
    extractor = get_feature_extractor(cfg.feature_extractor)
    mu_a, sigma_a = moments_from_features(extractor.extract(paths_a))
    mu_b, sigma_b = moments_from_features(extractor.extract(paths_b))
    value = frechet_distance(mu_a, sigma_a, mu_b, sigma_b)
    record = {"value": value, "count_a": len(paths_a), "count_b": len(paths_b),
              "extractor": extractor.name, "dim": int(mu_a.shape[0])}
    record_path = Path(cfg.out_dir) / "fid.json"
    atomic_write_text(record_path, json.dumps(record, indent=2) + "\n")
    print(f"fid {value:.6f} ({len(paths_a)} vs {len(paths_b)} images) "
          f"-> {record_path}")
    return 0


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = Path(cfg.out_dir)
    report_dir = out / "report"
    written: list[Path] = []
    scores_path = Path(args.scores) if args.scores else out / "scores.csv"
    if scores_path.is_file():
        score_set = read_scores(scores_path)
        thresholds = calibrate_thresholds(score_set, cfg.target_fmr)
        matrix = compute_map(score_set, thresholds, cfg.map_semantics)
        table_path = report_dir / "map.csv"
        atomic_write_text(table_path, matrix.to_table())
        record_path = report_dir / "map.json"
        atomic_write_text(record_path,
                          json.dumps(matrix.to_record(), indent=2) + "\n")
        figure_path = plot_map_heatmap(matrix, report_dir / "map_heatmap.png")
        written += [table_path, record_path, figure_path]
    for raw_path in sorted(out.glob("quality_*_raw.csv")):
        metric = raw_path.name[len("quality_"):-len("_raw.csv")]
        raw = read_raw_csv(raw_path)
        report = aggregate_report(
            {(metric, method, ds): vals for (method, ds), vals in raw.items()})
        table_path = report_dir / f"quality_{metric}.csv"
        atomic_write_text(table_path, report.table(metric))
        figure_path = plot_score_distributions(
            raw, report_dir / f"quality_{metric}_dist.png", title=metric)
        written += [table_path, figure_path]
    if not written:
        raise MorphbenchError(
            f"nothing to report: no score file at {scores_path} and no "
            f"quality exports under {out}")
    print(f"report with {len(written)} file(s) -> {report_dir}")
    for path in written:
        print(f"  {path}")
    return 0


def cmd_plots(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = Path(cfg.out_dir)
    plots_dir = out / "plots"
    written: list[Path] = []
    record_path = out / "map.json"
    if record_path.is_file():
        matrix = MapMatrix.from_record(json.loads(record_path.read_text()))
        written.append(plot_map_heatmap(matrix, plots_dir / "map_heatmap.png"))
    for raw_path in sorted(out.glob("quality_*_raw.csv")):
        metric = raw_path.name[len("quality_"):-len("_raw.csv")]
        raw = read_raw_csv(raw_path)
        written.append(plot_score_distributions(
            raw, plots_dir / f"quality_{metric}_dist.png", title=metric))
    if not written:
        raise MorphbenchError(
            f"nothing to plot: no map record or quality exports under {out}")
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--dataset", help="dataset name")
    common.add_argument("--dataset-root", dest="dataset_root",
                        help="directory with the source images")
    common.add_argument("--variant", choices=sorted(VARIANTS),
                        help="ablation variant")
    common.add_argument("--top-k", dest="top_k", type=int,
                        help="similar peers per subject for pairing")
    common.add_argument("--seed", type=int, help="base generation seed")
    common.add_argument("--steps", type=int, help="diffusion steps")
    common.add_argument("--outputs", type=int,
                        help="output images per pair")
    common.add_argument("--prompt", help="generation prompt")
    common.add_argument("--backend-gen", dest="backend_gen",
                        help="generation backend name")
    common.add_argument("--backend-frs", dest="backend_frs",
                        help="recognition backend name")
    common.add_argument("--scorer", action="append", dest="scorers",
                        metavar="NAME",
                        help="quality scorer (repeatable)")
    common.add_argument("--target-fmr", dest="target_fmr", type=float,
                        help="false-match-rate target for thresholds")
    common.add_argument("--map-semantics", dest="map_semantics",
                        choices=SEMANTICS,
                        help="attempt-counting semantics for the matrix")
    common.add_argument("--max-jobs", dest="max_jobs", type=int,
                        help="parallel generation jobs")
    common.add_argument("--out", dest="out_dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true",
                        help="info-level logging")

    parser = argparse.ArgumentParser(
        prog="morphbench",
        description="Morph generation and evaluation workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common],
                   help="scan a dataset into a manifest").set_defaults(func=cmd_ingest)
    sub.add_parser("pairs", parents=[common],
                   help="select morph pairs by embedding similarity").set_defaults(func=cmd_pairs)
    sub.add_parser("finetune", parents=[common],
                   help="fine-tune per-subject adapters").set_defaults(func=cmd_finetune)
    sub.add_parser("identity", parents=[common],
                   help="extract per-subject identity matrices").set_defaults(func=cmd_identity)
    sub.add_parser("morph", parents=[common],
                   help="generate morphs for the selected pairs").set_defaults(func=cmd_morph)

    p_map = sub.add_parser("map", parents=[common],
                           help="compute the acceptance matrix from a score file")
    p_map.add_argument("--scores", type=Path, help="comparison score CSV")
    p_map.set_defaults(func=cmd_map)

    p_quality = sub.add_parser("quality", parents=[common],
                               help="score image quality and aggregate")
    p_quality.add_argument("--images", type=Path,
                           help="image directory (default: <out>/morphs)")
    p_quality.set_defaults(func=cmd_quality)

    p_fid = sub.add_parser("fid", parents=[common],
                           help="feature-distribution distance between two image sets")
    p_fid.add_argument("--dir-a", dest="dir_a", type=Path,
                       help="first image directory (default: dataset images)")
    p_fid.add_argument("--dir-b", dest="dir_b", type=Path,
                       help="second image directory (default: <out>/morphs)")
    p_fid.set_defaults(func=cmd_fid)

    p_report = sub.add_parser("report", parents=[common],
                              help="render tables and figures into <out>/report")
    p_report.add_argument("--scores", type=Path, help="comparison score CSV")
    p_report.set_defaults(func=cmd_report)

    sub.add_parser("plots", parents=[common],
                   help="render figures for existing outputs").set_defaults(func=cmd_plots)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    return cfg.with_overrides(
        dataset=args.dataset,
        dataset_root=args.dataset_root,
        variant=args.variant,
        top_k=args.top_k,
        seed=args.seed,
        steps=args.steps,
        outputs=args.outputs,
        prompt=args.prompt,
        backend_gen=args.backend_gen,
        backend_frs=args.backend_frs,
        scorers=args.scorers,
        target_fmr=args.target_fmr,
        map_semantics=args.map_semantics,
        max_jobs=args.max_jobs,
        out_dir=args.out_dir)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        print(f"config-hash {cfg.config_hash()} seed {cfg.seed}")
        return args.func(cfg, args)
    except MorphbenchError as exc:
        print(f"{exc.slug}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
