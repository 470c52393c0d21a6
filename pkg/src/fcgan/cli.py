"""Command-line entry point.

Subcommands: train-metric, train-gan, sample, interpolate, eval, augment,
describe. Every run writes a manifest naming the config hash, seed and
source revision so artifacts are traceable to the exact configuration that
produced them.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augmentation import (
    few_shot_split,
    grid_search,
    train_classifier_augmented,
    train_classifier_baseline,
)
from .checkpoint import (
    load_gan_checkpoint,
    load_metric_checkpoint,
    save_metric_checkpoint,
)
from .config import RunConfig, config_hash, parse_config, save_config
from .data import Dataset, load_dataset, split_classes, class_split_of, split_manifest_hash, write_split_manifest
from .evaluation import (
    export_embeddings,
    feature_match_report,
    fid,
    information_split_report,
    intra_fid,
)
from .gan import train_gan
from .interpolation import find_attribute_directions, interpolate_2d, load_attribute_labels, traverse
from .metric import retrieval_eval, train_metric
from .networks import build_discriminator, build_generator, parameter_count, parameter_manifest
from .sampling import (
    compute_feature_stats,
    generate_images,
    sample_class_mean,
    sample_from_source,
    sample_latents,
    sample_random_feature,
    save_image_grid,
)
from .seeding import numpy_rng

COMMANDS = (
    "train-metric",
    "train-gan",
    "sample",
    "interpolate",
    "eval",
    "augment",
    "describe",
)


def _revision() -> str:
    head = Path(".git/HEAD")
    try:
        text = head.read_text(encoding="utf-8").strip()
        if text.startswith("ref:"):
            ref = Path(".git") / text.split(":", 1)[1].strip()
            return ref.read_text(encoding="utf-8").strip()[:12]
        return text[:12]
    except OSError:
        return "unknown"


def _write_manifest(command: str, config: RunConfig, extra: dict | None = None) -> Path:
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "revision": _revision(),
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / f"manifest_{command.replace('-', '_')}.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    save_config(config, out_dir / "config.json")
    return path


def _load_partitions(config: RunConfig) -> tuple[Dataset, Dataset]:
    if config.data.root is None:
        raise ValueError("config.data.root must point at a directory-per-class dataset")
    dataset = load_dataset(config.data.root, config.data.image_size)
    count = config.data.train_class_count
    if count is None:
        raise ValueError("config.data.train_class_count is required to split classes")
    return split_classes(dataset, count)


def cmd_train_metric(config: RunConfig, args: argparse.Namespace) -> int:
    train, novel = _load_partitions(config)
    split = class_split_of(train, novel)
    out_dir = Path(config.output_dir)
    write_split_manifest(split, out_dir / "split_manifest.txt")
    result = train_metric(train, config.metric)
    path = save_metric_checkpoint(
        out_dir / "metric.pt",
        result.extractor,
        config.metric,
        split_manifest_hash=split_manifest_hash(split),
        config_hash=config_hash(config),
    )
    recall = retrieval_eval(result.extractor, novel, k=1)
    _write_manifest(
        "train-metric",
        config,
        {
            "checkpoint": str(path),
            "epoch_losses": result.epoch_losses,
            "novel_recall_at_1": recall,
        },
    )
    print(f"metric checkpoint: {path}")
    if result.epoch_losses:
        print(f"loss first/last: {result.epoch_losses[0]:.4f} / {result.epoch_losses[-1]:.4f}")
    print(f"novel recall@1: {recall:.3f}")
    return 0


def cmd_train_gan(config: RunConfig, args: argparse.Namespace) -> int:
    if not args.metric_checkpoint:
        raise ValueError(
            "train-gan needs --metric-checkpoint; run `fcgan train-metric` first "
            "and pass the metric.pt it produced"
        )
    metric = load_metric_checkpoint(args.metric_checkpoint)
    train, _ = _load_partitions(config)
    result = train_gan(
        train,
        metric.extractor,
        config.networks,
        config.gan,
        output_dir=config.output_dir,
        metric_config=metric.config,
        config_hash=config_hash(config),
    )
    _write_manifest(
        "train-gan",
        config,
        {
            "checkpoint": str(result.checkpoint_path),
            "metrics_log": str(result.metrics_path),
            "iterations": result.state.iteration,
        },
    )
    print(f"gan checkpoint: {result.checkpoint_path}")
    return 0


def _require_trained(checkpoint_path: str) -> "object":
    bundle = load_gan_checkpoint(checkpoint_path)
    if bundle.iteration == 0:
        raise ValueError(
            f"checkpoint {checkpoint_path} has zero training iterations; "
            "train the GAN before sampling"
        )
    return bundle


def cmd_sample(config: RunConfig, args: argparse.Namespace) -> int:
    bundle = _require_trained(args.checkpoint)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = args.count or config.sampler.count
    seed = config.seed
    rows = []
    specs: list[dict] = []

    if args.mode == "source":
        if not args.source_images:
            raise ValueError("--mode source requires --source-images")
        for path in args.source_images:
            source = load_dataset_single(path, config.data.image_size)
            images = sample_from_source(
                bundle.generator,
                bundle.extractor,
                source,
                count=count,
                z_policy="fixed" if config.sampler.z_policy == "fixed" else "per-sample",
                seed=seed,
            )
            rows.append(np.concatenate([source[None], images], axis=0))
            specs.append({"mode": "source", "source": str(path), "count": count, "seed": seed})
        grid = np.concatenate(rows, axis=0)
        columns = count + 1
    else:
        train, novel = _load_partitions(config)
        partition = args.partition or ("novel" if args.mode == "class-mean" else "train")
        stats_set = train if partition == "train" else novel
        stats = compute_feature_stats(bundle.extractor, stats_set, partition)
        if args.mode == "class-mean":
            if not args.class_name:
                raise ValueError("--mode class-mean requires --class")
            grid = sample_class_mean(
                bundle.generator,
                stats,
                args.class_name,
                count=count,
                std_scale=config.sampler.std_scale,
                seed=seed,
            )
            specs.append(
                {
                    "mode": "class-mean",
                    "class": args.class_name,
                    "partition": partition,
                    "std_scale": config.sampler.std_scale,
                    "count": count,
                    "seed": seed,
                }
            )
        else:
            grid = sample_random_feature(bundle.generator, stats, count=count, seed=seed)
            specs.append(
                {"mode": "random", "partition": partition, "count": count, "seed": seed}
            )
        columns = None

    grid_path = save_image_grid(grid, out_dir / f"samples_{args.mode}.png", columns=columns)
    manifest = {
        "uncurated": True,
        "config_hash": config_hash(config),
        "z_policy": config.sampler.z_policy,
        "specs": specs,
        "grid": str(grid_path),
    }
    (out_dir / f"samples_{args.mode}_manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    _write_manifest("sample", config, {"grid": str(grid_path)})
    print(f"grid: {grid_path} (uncurated)")
    return 0


def load_dataset_single(path: str | Path, image_size: int) -> np.ndarray:
    """Load one image file to a (h, w, 3) array in [-1, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float32) / 127.5 - 1.0


def cmd_interpolate(config: RunConfig, args: argparse.Namespace) -> int:
    bundle = _require_trained(args.checkpoint)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = numpy_rng(config.seed, "interpolate")
    latent_dim = bundle.network_config.latent_dim

    if args.attribute:
        samples = args.samples or 64
        z = sample_latents(samples, latent_dim, rng)
        _, novel = _load_partitions(config)
        stats = compute_feature_stats(bundle.extractor, novel, "novel")
        from .sampling import draw_random_features

        f = draw_random_features(stats, samples, rng)
        ids = [f"sample-{i:04d}" for i in range(samples)]
        if not args.labels:
            images = generate_images(bundle.generator, f, z)
            grid_path = save_image_grid(images, out_dir / "attribute_samples.png")
            payload = [
                {"id": ids[i], "z": z[i].tolist(), "f": f[i].tolist()} for i in range(samples)
            ]
            (out_dir / "attribute_samples.json").write_text(
                json.dumps(payload) + "\n", encoding="utf-8"
            )
            print(
                f"wrote {samples} samples to {grid_path}; label them in a JSONL file "
                "({id, attributes: {name: +1/-1}}) and re-run with --labels"
            )
            return 0
        labels = load_attribute_labels(args.labels)
        triples = [
            (z[i], f[i], labels[ids[i]]) for i in range(samples) if ids[i] in labels
        ]
        if not triples:
            raise ValueError("labels file matches none of the generated sample ids")
        directions = find_attribute_directions(triples)
        if args.attribute not in directions:
            raise ValueError(f"attribute {args.attribute!r} not present in labels")
        direction = directions[args.attribute]
        scales = [-3.0, -1.5, 0.0, 1.5, 3.0]
        for space in ("feature", "latent"):
            images = traverse(
                bundle.generator, z[0], f[0], direction, space=space, scales=scales
            )
            save_image_grid(
                images, out_dir / f"traverse_{args.attribute}_{space}.png", columns=len(scales)
            )
        _write_manifest("interpolate", config, {"attribute": args.attribute, "scales": scales})
        print(f"attribute traversals written under {out_dir}")
        return 0

    steps = args.steps or 5
    z_pair = sample_latents(2, latent_dim, rng)
    _, novel = _load_partitions(config)
    idx = rng.choice(len(novel), size=2, replace=False)
    from .metric import extract_features
    import torch

    with torch.no_grad():
        f_pair = extract_features(bundle.extractor, novel.images[idx]).cpu().numpy()
    grid = interpolate_2d(
        bundle.generator, z_pair[0], z_pair[1], f_pair[0], f_pair[1], steps=steps
    )
    flat = grid.images.reshape(-1, *grid.images.shape[2:])
    grid_path = save_image_grid(flat, out_dir / "interpolation_grid.png", columns=steps)
    _write_manifest(
        "interpolate",
        config,
        {"grid": str(grid_path), "steps": steps, "method": grid.method},
    )
    print(f"interpolation grid: {grid_path} (method: {grid.method})")
    return 0


def cmd_eval(config: RunConfig, args: argparse.Namespace) -> int:
    bundle = _require_trained(args.checkpoint)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, novel = _load_partitions(config)
    extractor = bundle.extractor
    rng = numpy_rng(config.seed, "eval")

    train_stats = compute_feature_stats(extractor, train, "train")
    novel_stats = compute_feature_stats(extractor, novel, "novel")
    n_eval = config.eval.samples_per_class

    rows = []
    fake_by_class: dict[str, np.ndarray] = {}
    for mode, stats, real in (
        ("T-SM", train_stats, train),
        ("N-SM", novel_stats, novel),
    ):
        fakes = []
        for cls in real.classes:
            fakes.append(
                sample_class_mean(
                    bundle.generator, stats, cls, count=n_eval, seed=config.seed
                )
            )
        fake = np.concatenate(fakes, axis=0)
        rows.append((mode, fid(real.images, fake, extractor, config.eval.batch_size)))

    # novel real-image features: one generation per sampled source
    idx = rng.choice(len(novel), size=min(len(novel), n_eval * len(novel.classes)), replace=False)
    sources = novel.images[idx]
    import torch

    with torch.no_grad():
        feats = extract_features_list(extractor, sources)
    z = sample_latents(sources.shape[0], bundle.network_config.latent_dim, rng)
    nrf = generate_images(bundle.generator, feats, z, batch_size=config.sampler.batch_size)
    rows.append(("N-RF", fid(novel.images, nrf, extractor, config.eval.batch_size)))
    for cls in novel.classes:
        cls_mask = np.asarray([novel.labels[i] == cls for i in idx])
        fake_by_class[cls] = nrf[cls_mask]
    intra = intra_fid(novel, fake_by_class, extractor, config.eval.min_per_class)

    match = feature_match_report(extractor, sources, nrf, seed=config.seed)
    split = information_split_report(
        extractor=extractor,
        generator=bundle.generator,
        feature_pool=feats,
        probes=config.eval.probes,
        samples_per_probe=config.eval.samples_per_probe,
        seed=config.seed,
    )
    embeddings_path = export_embeddings(extractor, novel, out_dir / "novel_embeddings.jsonl")

    print(f"{'mode':<8}{'FID':>12}")
    for mode, value in rows:
        print(f"{mode:<8}{value:>12.4f}")
    print(f"intra-FID (N-RF, novel): {intra:.4f}")
    print(
        f"feature match: matched={match['matched_mse']:.4f} "
        f"deranged={match['mismatched_mse']:.4f}"
    )
    print(
        f"information split ratio (var_z / var_f): {split['ratio']:.4f}"
    )
    report = {
        "config_hash": config_hash(config),
        "fid": {mode: value for mode, value in rows},
        "intra_fid_nrf": intra,
        "feature_match": match,
        "information_split": split,
        "embeddings": str(embeddings_path),
        "note": "embedder is the frozen metric extractor; scores are internal-scale",
    }
    (out_dir / "eval_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8"
    )
    _write_manifest("eval", config, {"report": str(out_dir / 'eval_report.json')})
    return 0


def extract_features_list(extractor, images: np.ndarray) -> np.ndarray:
    from .metric import extract_features
    import torch

    with torch.no_grad():
        return extract_features(extractor, images).cpu().numpy()


def cmd_augment(config: RunConfig, args: argparse.Namespace) -> int:
    bundle = _require_trained(args.checkpoint)
    _, novel = _load_partitions(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    section = config.augment
    base_cfg = section.to_augment_config(config.seed, config.device)

    if args.action == "sweep":
        result = grid_search(
            novel,
            bundle.generator,
            bundle.extractor,
            section.shots,
            section.ratios,
            section.etas,
            base_cfg,
            section.test_per_class,
        )
        header = f"{'real/class':>10} {'fake/real':>10} {'eta':>6} {'baseline':>10} {'augmented':>10}"
        print(header)
        for row in result.table:
            print(
                f"{row['shots']:>10} {row['ratio']:>10} {row['eta']:>6} "
                f"{row['baseline_accuracy']:>10.4f} {row['augmented_accuracy']:>10.4f}"
            )
        best = {
            shots: {
                "ratio": report.config.fake_per_real,
                "eta": report.config.eta,
                "baseline_accuracy": report.baseline_accuracy,
                "augmented_accuracy": report.augmented_accuracy,
            }
            for shots, report in result.best_per_shots.items()
        }
        payload = {"config_hash": config_hash(config), "table": result.table, "best": best}
        (out_dir / "augment_sweep.json").write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8"
        )
        _write_manifest("augment", config, {"report": str(out_dir / 'augment_sweep.json')})
        return 0

    shots = args.shots or section.real_per_class
    ratio = section.fake_per_real if args.ratio is None else args.ratio
    eta = section.eta if args.eta is None else args.eta
    train_subset, test_set = few_shot_split(novel, shots, config.seed, section.test_per_class)
    from dataclasses import replace as dc_replace

    cfg = dc_replace(base_cfg, real_per_class=shots, fake_per_real=ratio, eta=eta)
    baseline = train_classifier_baseline(train_subset, test_set, cfg)
    augmented = train_classifier_augmented(
        train_subset, test_set, bundle.generator, bundle.extractor, cfg
    )
    print(f"{'real/class':>10} {'fake/real':>10} {'eta':>6} {'test acc':>10}")
    print(f"{shots:>10} {0:>10} {'-':>6} {baseline:>10.4f}")
    print(f"{shots:>10} {ratio:>10} {eta:>6} {augmented:>10.4f}")
    payload = {
        "config_hash": config_hash(config),
        "shots": shots,
        "ratio": ratio,
        "eta": eta,
        "baseline_accuracy": baseline,
        "augmented_accuracy": augmented,
    }
    (out_dir / "augment_report.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )
    _write_manifest("augment", config, {"report": str(out_dir / 'augment_report.json')})
    return 0


def cmd_describe(config: RunConfig, args: argparse.Namespace) -> int:
    import torch

    torch.manual_seed(0)
    generator = build_generator(config.networks)
    discriminator = build_discriminator(config.networks)
    from .metric import FeatureExtractor

    extractor = FeatureExtractor(
        config.metric.feature_dim, config.data.image_size, config.metric.blocks_per_stage
    )
    for name, model in (
        ("generator", generator),
        ("discriminator", discriminator),
        ("extractor", extractor),
    ):
        print(f"== {name} ({parameter_count(model):,} parameters)")
        for pname, shape in parameter_manifest(model):
            print(f"  {pname:<60} {shape}")
    _write_manifest("describe", config)
    return 0


def dispatch(command: str, config: RunConfig, args: argparse.Namespace) -> int:
    """Route a command name to its handler; unknown commands raise."""
    handlers = {
        "train-metric": cmd_train_metric,
        "train-gan": cmd_train_gan,
        "sample": cmd_sample,
        "interpolate": cmd_interpolate,
        "eval": cmd_eval,
        "augment": cmd_augment,
        "describe": cmd_describe,
    }
    if command not in handlers:
        raise ValueError(f"unknown command: {command!r} (choose from {', '.join(COMMANDS)})")
    return handlers[command](config, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fcgan", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, **kwargs) -> argparse.ArgumentParser:
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", required=True, help="JSON config file")
        return p

    add("train-metric", help="train the feature extractor")
    p = add("train-gan", help="train the conditional GAN")
    p.add_argument("--metric-checkpoint", help="metric.pt from train-metric")
    p = add("sample", help="generate uncurated image grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", required=True, choices=["source", "class-mean", "random"])
    p.add_argument("--source-images", nargs="*", help="source image files (mode=source)")
    p.add_argument("--class", dest="class_name", help="class name (mode=class-mean)")
    p.add_argument("--partition", choices=["train", "novel"])
    p.add_argument("--count", type=int)
    p = add("interpolate", help="interpolation grids and attribute traversals")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", action="store_true", help="2-D latent x feature grid (default)")
    p.add_argument("--steps", type=int)
    p.add_argument("--attribute", help="attribute name for direction traversal")
    p.add_argument("--labels", help="JSONL attribute labels for generated samples")
    p.add_argument("--samples", type=int, help="samples to label for directions")
    p = add("eval", help="FID / intra-FID / feature-matching report")
    p.add_argument("--checkpoint", required=True)
    p = add("augment", help="few-shot augmentation runs")
    p.add_argument("action", nargs="?", default="run", choices=["run", "sweep"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shots", type=int)
    p.add_argument("--ratio", type=int)
    p.add_argument("--eta", type=float)
    add("describe", help="print the layer manifest for the configured networks")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config)
        return dispatch(args.command, config, args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
