"""Command-line surface wiring all modules into reproducible experiments.

Every command is a pure function of its configuration and input files:
reruns produce identical outputs. Flags mirror config-file keys and
override them; all randomness flows from the single ``seed`` key.
"""

from __future__ import annotations

import argparse
import csv
import shutil
import struct
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .densesift import (
    DenseSiftParams,
    extract_dense_sift,
    local_from_descriptor_set,
    local_to_descriptor_set,
)
from .fisher import (
    apply_pca,
    encode_fv,
    normalize_fv,
    read_gmm_file,
    read_pca_file,
    train_gmm,
    train_pca,
    write_gmm_file,
    write_pca_file,
)
from .image import DEFAULT_FILL, GrayImage, circular_center_crop, downscale, load_grayscale, resize_max_side, rotate
from .pipeline import (
    CANONICAL_MAX_SIDE,
    EncodePipeline,
    parallel_map,
    rank_all,
    sweep_rotation,
    sweep_scale,
)
from .pooling import (
    GridKind,
    IndexEntry,
    Strategy,
    TransformGrid,
    pooled_database,
    read_index_file,
    write_index_file,
)
from .retrieval import EvalReport, FusionConfig, evaluate, fused_rank
from .store import (
    DescriptorSet,
    FormatError,
    ValidationError,
    parse_manifest,
    read_descriptor_file,
    write_descriptor_file,
)

IMAGE_SUFFIXES = (".pgm", ".ppm", ".png", ".jpg", ".jpeg")


def _collect_images(spec: Path) -> list[tuple[str, Path]]:
    """Resolve an image directory (or a text list of paths) to (id, path)
    pairs; ids are sorted relative posix paths, or list lines verbatim."""
    if spec.is_dir():
        found = sorted(
            p for p in spec.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES
        )
        return [(p.relative_to(spec).as_posix(), p) for p in found]
    pairs = []
    for line in spec.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            pairs.append((line, Path(line)))
    return pairs


def _safe_name(image_id: str) -> str:
    return image_id.replace("/", "__").replace("\\", "__")


def _sift_params(cfg: RunConfig) -> DenseSiftParams:
    return DenseSiftParams(
        stride=cfg.get_int("stride", 4),
        magnification=cfg.get_float("magnification", 6.0),
        scales=cfg.get_floats("scales", (4.0,)),
        clamp=cfg.get_float("clamp", 0.2),
        low_contrast_norm_floor=cfg.get_float("low_contrast_norm_floor", 1e-6),
    )


def _posterior_floor(cfg: RunConfig) -> float | None:
    floor = cfg.get_float("posterior_floor", 1e-4)
    return None if floor <= 0 else floor


def _load_transformed_image(
    path: Path, cfg: RunConfig, canonical: int
) -> GrayImage:
    """Canonical resize plus the optional extract-time perturbations
    (circular crop, rotation, downscale with re-upscale), in that order."""
    img = resize_max_side(load_grayscale(path), canonical)
    fill = cfg.get_float("fill", DEFAULT_FILL)
    if cfg.get_bool("circular_crop"):
        img = circular_center_crop(img, fill)
    angle = cfg.get_float("rotate", 0.0)
    if angle != 0.0:
        img = rotate(img, angle, fill)
    ratio = cfg.get_float("scale_ratio", 1.0)
    if ratio != 1.0:
        img = resize_max_side(downscale(img, ratio), canonical)
    return img


def cmd_extract(cfg: RunConfig) -> int:
    images = _collect_images(cfg.get_path("images"))
    if not images:
        raise ConfigError("no inputs: the image directory/list is empty")
    out_dir = Path(cfg.require("out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    params = _sift_params(cfg)
    canonical = cfg.get_int("canonical_side", CANONICAL_MAX_SIDE)
    threads = cfg.get_int("threads", 1)

    failures: list[str] = []

    def run(pair):
        image_id, path = pair
        try:
            img = _load_transformed_image(path, cfg, canonical)
            local = extract_dense_sift(img, params, image_id=image_id)
            write_descriptor_file(
                local_to_descriptor_set(local), out_dir / f"{_safe_name(image_id)}.gdsc"
            )
            return image_id, len(local), None
        except (OSError, FormatError, ValidationError) as exc:
            return image_id, 0, str(exc)

    results = parallel_map(run, images, threads)
    for image_id, count, error in results:
        if error is not None:
            failures.append(image_id)
            print(f"FAILED {image_id}: {error}", file=sys.stderr)
        else:
            print(f"{image_id}: {count} descriptors")
    if failures:
        print(f"{len(failures)} image(s) failed", file=sys.stderr)
        return 1
    return 0


def _load_local_sets(directory: Path) -> list:
    files = sorted(directory.glob("*.gdsc"))
    if not files:
        raise ConfigError(f"no .gdsc descriptor files under {directory}")
    return [local_from_descriptor_set(read_descriptor_file(p)) for p in files]


def cmd_train(cfg: RunConfig) -> int:
    locals_ = _load_local_sets(cfg.get_path("descriptors"))
    stacked = np.concatenate([l.vectors for l in locals_ if len(l)]).astype(np.float64)
    budget = cfg.get_int("sample_budget", 200000)
    seed = cfg.get_int("seed", 0)
    rng = np.random.default_rng(seed)
    if len(stacked) > budget:
        stacked = stacked[rng.choice(len(stacked), size=budget, replace=False)]

    pca = train_pca(stacked, cfg.get_int("pca_dim", 64))
    reduced = apply_pca(pca, stacked)
    gmm = train_gmm(
        reduced,
        cfg.get_int("gmm_k", 256),
        seed=seed,
        max_iters=cfg.get_int("max_iters", 100),
        tol=cfg.get_float("tol", 1e-5),
    )
    write_pca_file(pca, cfg.get_out_path("pca"))
    write_gmm_file(gmm, cfg.get_out_path("gmm"))
    for i, ll in enumerate(gmm.train_log_likelihoods):
        print(f"iter {i} log-likelihood {ll:.6f}")
    print(f"final log-likelihood {gmm.train_log_likelihoods[-1]:.6f}")
    print(f"trained on {len(stacked)} descriptors")
    return 0


def cmd_encode(cfg: RunConfig) -> int:
    locals_ = _load_local_sets(cfg.get_path("descriptors"))
    pca = read_pca_file(cfg.get_path("pca"))
    gmm = read_gmm_file(cfg.get_path("gmm"))
    power_alpha = cfg.get_float("power_alpha", 0.5)
    floor = _posterior_floor(cfg)
    threads = cfg.get_int("threads", 1)

    def run(local):
        if len(local) == 0:
            return local.image_id, np.zeros(2 * gmm.n_components * gmm.dim), True
        fv = encode_fv(gmm, apply_pca(pca, local.vectors), posterior_floor=floor)
        normalized = normalize_fv(fv, power_alpha)
        return local.image_id, normalized.values, normalized.degenerate

    rows = parallel_map(run, locals_, threads)
    for image_id, _, degenerate in rows:
        if degenerate:
            print(f"warning: {image_id} produced a degenerate all-zero vector", file=sys.stderr)
    dset = DescriptorSet(
        2 * gmm.n_components * gmm.dim,
        tuple(r[0] for r in rows),
        np.array([r[1] for r in rows], dtype=np.float32),
        {
            "source": "fv",
            "gmm_k": str(gmm.n_components),
            "pca_dim": str(gmm.dim),
            "power_alpha": f"{power_alpha:g}",
        },
    )
    out = cfg.get_out_path("out")
    write_descriptor_file(dset, out)
    print(f"wrote {len(dset)} vectors of dim {dset.dim} to {out}")
    return 0


def _grid_from_config(cfg: RunConfig) -> TransformGrid:
    kind = cfg.get("grid_kind", "rotation")
    if kind == "rotation":
        return TransformGrid.rotation(cfg.get_int("pool_limit", 0), cfg.get_int("step", 10))
    if kind == "scale":
        return TransformGrid.scale(cfg.get_int("extra_scales", 0))
    raise ConfigError(f"grid_kind must be rotation or scale, got {kind!r}")


def cmd_index(cfg: RunConfig) -> int:
    paths = [Path(p) for p in cfg.require("descriptors").split(",") if p]
    for p in paths:
        if not p.exists():
            raise ConfigError(f"descriptor file does not exist: {p}")
    sets = [read_descriptor_file(p) for p in paths]
    grid = _grid_from_config(cfg)
    strategy_name = cfg.get("strategy", "none").upper()
    if strategy_name not in Strategy.__members__:
        raise ConfigError(f"unknown strategy {strategy_name.lower()!r}")
    strategy = Strategy[strategy_name]
    entries = pooled_database(sets, strategy, grid, cfg.get_bool("renormalize"))
    out = cfg.get_out_path("out")
    write_index_file(out, entries, grid, strategy)
    per_entry = entries[0].vectors.shape[0]
    print(
        f"indexed {len(entries)} images, {per_entry} vector(s) per entry, "
        f"strategy {strategy.name}, grid size {grid.size}"
    )
    if strategy is Strategy.PWL:
        print(f"closed loop: {entries[0].closed_loop}")
    return 0


def _load_entries(path: Path) -> list[IndexEntry]:
    """An index file, or a plain descriptor set treated as unpooled entries."""
    magic = path.open("rb").read(4)
    if magic == b"GIDX":
        entries, _, _ = read_index_file(path)
        return entries
    dset = read_descriptor_file(path)
    return [
        IndexEntry(image_id, Strategy.NONE, row.astype(np.float64))
        for image_id, row in zip(dset.ids, dset.vectors)
    ]


def _write_report_csv(path: Path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "score"])
        for query_id, score in report.per_query:
            writer.writerow([query_id, f"{score:.6f}"])


def _write_sweep_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "score"])
        for param, score in rows:
            writer.writerow([f"{param:g}", f"{score:.6f}"])


def cmd_evaluate(cfg: RunConfig) -> int:
    entries = _load_entries(cfg.get_path("index"))
    queries = read_descriptor_file(cfg.get_path("queries"))
    manifest = parse_manifest(cfg.get_path("manifest"))
    report = evaluate(
        manifest, rank_all(queries, entries, manifest, cfg.get_int("threads", 1))
    )
    out = cfg.get_out_path("out")
    _write_report_csv(out, report)
    if cfg.get_bool("plots", True):
        from .plotting import save_score_histogram

        save_score_histogram(
            report.per_query, f"{manifest.metric.name} = {report.aggregate:.4f}",
            out.with_suffix(".png"),
        )
    print(f"{manifest.metric.name} {report.aggregate:.6f} over {len(report.per_query)} queries")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    kind = cfg.require("kind")
    if kind not in ("rotation", "scale"):
        raise ConfigError(f"kind must be rotation or scale, got {kind!r}")
    if kind == "rotation" and not cfg.get_bool("db_circular_crop"):
        raise ConfigError(
            "rotation sweeps require db_circular_crop=true: the database index "
            "must be built from circularly cropped images, as queries are"
        )
    entries = _load_entries(cfg.get_path("index"))
    manifest = parse_manifest(cfg.get_path("manifest"))
    pipeline = EncodePipeline(
        sift=_sift_params(cfg),
        pca=read_pca_file(cfg.get_path("pca")),
        gmm=read_gmm_file(cfg.get_path("gmm")),
        power_alpha=cfg.get_float("power_alpha", 0.5),
        posterior_floor=_posterior_floor(cfg),
    )
    canonical = cfg.get_int("canonical_side", CANONICAL_MAX_SIDE)
    threads = cfg.get_int("threads", 1)
    needed = {q.query_id for q in manifest.queries}
    images = {}
    for image_id, path in _collect_images(cfg.get_path("images")):
        if image_id in needed:
            images[image_id] = resize_max_side(load_grayscale(path), canonical)
    missing = needed - set(images)
    if missing:
        raise ConfigError(f"query images missing from input: {sorted(missing)[:5]}")

    if kind == "rotation":
        angles = [int(a) for a in cfg.get_floats("angles", tuple(range(-180, 181, 10)))]
        report = sweep_rotation(
            images, entries, manifest, pipeline, angles,
            fill=cfg.get_float("fill", DEFAULT_FILL), threads=threads,
        )
        xlabel = "query rotation angle (degrees)"
    else:
        ratios = list(cfg.get_floats("ratios", (1.0, 0.75, 0.5, 0.375, 0.25, 0.2, 0.125)))
        report = sweep_scale(
            images, entries, manifest, pipeline, ratios,
            canonical_side=canonical, threads=threads,
        )
        xlabel = "query scale ratio"

    out = cfg.get_out_path("out")
    _write_sweep_csv(out, report.sweep)
    if cfg.get_bool("per_query_csv"):
        _write_report_csv(out.with_name(out.stem + "_last_param_detail.csv"), report)
    if cfg.get_bool("plots", True):
        from .plotting import save_sweep_plot

        save_sweep_plot(
            report.sweep, xlabel, report.metric.name, f"{kind} sweep",
            out.with_suffix(".png"),
        )
    for param, score in report.sweep:
        print(f"{param:g}\t{score:.6f}")
    return 0


def cmd_fuse(cfg: RunConfig) -> int:
    entries_a = _load_entries(cfg.get_path("database_a"))
    entries_b = _load_entries(cfg.get_path("database_b"))
    queries_a = read_descriptor_file(cfg.get_path("queries_a"))
    queries_b = read_descriptor_file(cfg.get_path("queries_b"))
    manifest = parse_manifest(cfg.get_path("manifest"))

    step = cfg.get_float("alpha_step", 0.1)
    alphas = cfg.get_floats("alphas", tuple(np.round(np.arange(0.0, 1.0 + 1e-9, step), 10)))
    lookup_a = {i: v for i, v in zip(queries_a.ids, queries_a.vectors)}
    lookup_b = {i: v for i, v in zip(queries_b.ids, queries_b.vectors)}

    rows = []
    for alpha in alphas:
        config = FusionConfig(alpha=float(alpha))
        ranked = {}
        for query in manifest.queries:
            if query.query_id not in lookup_a or query.query_id not in lookup_b:
                raise ConfigError(f"query {query.query_id!r} missing from a descriptor set")
            ranked[query.query_id] = fused_rank(
                lookup_a[query.query_id].astype(np.float64),
                lookup_b[query.query_id].astype(np.float64),
                entries_a,
                entries_b,
                config,
                query_id=query.query_id,
                exclude_id=query.query_id if query.exclude_self else None,
            )
        rows.append((float(alpha), evaluate(manifest, ranked).aggregate))

    out = cfg.get_out_path("out")
    _write_sweep_csv(out, rows)
    if cfg.get_bool("plots", True):
        from .plotting import save_sweep_plot

        save_sweep_plot(
            rows, "alpha (weight on family a)", manifest.metric.name,
            "early fusion sweep", out.with_suffix(".png"), highlight_max=True,
        )
    best_alpha, best_score = max(rows, key=lambda r: r[1])
    for alpha, score in rows:
        marker = "  <-- best" if alpha == best_alpha else ""
        print(f"{alpha:g}\t{score:.6f}{marker}")
    print(f"best alpha {best_alpha:g} with {manifest.metric.name} {best_score:.6f}")
    return 0


def cmd_import(cfg: RunConfig) -> int:
    src = cfg.get_path("in")
    dset = read_descriptor_file(src)  # full validation
    out = cfg.get_out_path("out")
    shutil.copyfile(src, out)
    print(
        f"imported {len(dset)} records of dim {dset.dim} "
        f"(metadata: {', '.join(f'{k}={v}' for k, v in dset.metadata.items()) or 'none'})"
    )
    return 0


def cmd_info(cfg: RunConfig) -> int:
    path = cfg.get_path("in")
    magic = path.open("rb").read(4)
    if magic == b"GDSC":
        dset = read_descriptor_file(path)
        print(f"GDSC v1 dim {dset.dim} count {len(dset)}")
        for key, value in dset.metadata.items():
            print(f"  {key}={value}")
    elif magic == b"GIDX":
        entries, grid, strategy = read_index_file(path)
        print(
            f"GIDX v1 kind {grid.kind.name} strategy {strategy.name} "
            f"entries {len(entries)} dim {entries[0].dim if entries else 0} "
            f"vectors/entry {entries[0].vectors.shape[0] if entries else 0}"
        )
    elif magic == b"GPCA":
        model = read_pca_file(path)
        print(f"GPCA v1 input_dim {model.input_dim} output_dim {model.output_dim}")
    elif magic == b"GGMM":
        model = read_gmm_file(path)
        print(f"GGMM v1 components {model.n_components} dim {model.dim}")
    else:
        raise FormatError(f"{path}: unrecognized magic {magic!r}")
    return 0


_COMMANDS = {
    "extract": (cmd_extract, [
        "images", "out_dir", "scales", "stride", "magnification", "clamp",
        "canonical_side", "circular_crop", "rotate", "scale_ratio", "fill", "threads",
    ]),
    "train": (cmd_train, [
        "descriptors", "pca", "gmm", "pca_dim", "gmm_k", "sample_budget",
        "seed", "max_iters", "tol",
    ]),
    "encode": (cmd_encode, [
        "descriptors", "pca", "gmm", "out", "power_alpha", "posterior_floor", "threads",
    ]),
    "index": (cmd_index, [
        "descriptors", "strategy", "grid_kind", "pool_limit", "step",
        "extra_scales", "renormalize", "out",
    ]),
    "evaluate": (cmd_evaluate, ["index", "queries", "manifest", "out", "plots", "threads"]),
    "sweep": (cmd_sweep, [
        "kind", "images", "index", "pca", "gmm", "manifest", "angles", "ratios",
        "canonical_side", "fill", "out", "per_query_csv", "plots", "threads",
        "db_circular_crop", "scales", "stride", "magnification", "clamp",
        "power_alpha", "posterior_floor",
    ]),
    "fuse": (cmd_fuse, [
        "queries_a", "queries_b", "database_a", "database_b", "manifest",
        "alpha_step", "alphas", "out", "plots", "threads",
    ]),
    "import": (cmd_import, ["in", "out"]),
    "info": (cmd_info, ["in"]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvr",
        description="Fisher-vector global-descriptor retrieval engine",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (func, keys) in _COMMANDS.items():
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", default=None, help="key=value config file")
        for key in keys:
            sub.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
        sub.set_defaults(func=func, keys=keys)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, key) for key in args.keys}
    try:
        cfg = RunConfig.merged(args.config, overrides)
        return args.func(cfg)
    except (ConfigError, ValidationError, FormatError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
