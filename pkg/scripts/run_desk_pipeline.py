"""End-to-end desk-scale walkthrough on synthetic data.

Generates a dataset, then drives the CLI through train-metric, train-gan,
sample, interpolate, eval and an augmentation run. Settings mirror the
acceptance configuration; expect roughly half an hour on CPU.

Example:
    python scripts/run_desk_pipeline.py --workdir runs/walkthrough
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from fcgan.cli import main as fcgan_main
from fcgan.synthetic import ShapeDatasetSpec, make_shape_dataset, write_dataset_directory


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/walkthrough")
    parser.add_argument("--iterations", type=int, default=2500)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    data_root = workdir / "data"
    out_dir = workdir / "out"
    if not data_root.exists():
        dataset = make_shape_dataset(ShapeDatasetSpec(per_class=64, image_size=32), seed=100)
        write_dataset_directory(dataset, data_root)
        print(f"dataset: {data_root}")

    config = {
        "seed": args.seed,
        "output_dir": str(out_dir),
        "data": {"root": str(data_root), "image_size": 32, "train_class_count": 8},
        "metric": {
            "feature_dim": 64,
            "sigma": 5.0,
            "learning_rate": 5e-4,
            "epochs": 20,
            "batch_size": 32,
            "blocks_per_stage": 1,
        },
        "networks": {"latent_dim": 64, "base_channels": 24},
        "gan": {
            "feature_loss_scale": 0.05,
            "batch_size": 16,
            "max_iterations": args.iterations,
            "checkpoint_every": 500,
        },
        "sampler": {"count": 8},
        "eval": {"samples_per_class": 16},
        "augment": {
            "classifier_epochs": 30,
            "batch_size": 8,
            "test_per_class": 40,
            "shots": [1, 2],
            "ratios": [1, 3, 5],
            "etas": [0.0, 1.5, 2.0],
        },
    }
    config_path = workdir / "config.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n")

    def run(*argv: str) -> None:
        print(f"\n$ fcgan {' '.join(argv)}")
        code = fcgan_main(list(argv))
        if code != 0:
            raise SystemExit(code)

    run("describe", "--config", str(config_path))
    run("train-metric", "--config", str(config_path))
    run(
        "train-gan",
        "--config",
        str(config_path),
        "--metric-checkpoint",
        str(out_dir / "metric.pt"),
    )
    checkpoint = str(out_dir / "gan_final.pt")
    novel_class_dir = sorted(p for p in data_root.iterdir() if p.is_dir())[-1]
    source = str(sorted(novel_class_dir.iterdir())[0])
    run(
        "sample",
        "--config",
        str(config_path),
        "--checkpoint",
        checkpoint,
        "--mode",
        "source",
        "--source-images",
        source,
        "--count",
        "8",
    )
    run(
        "sample",
        "--config",
        str(config_path),
        "--checkpoint",
        checkpoint,
        "--mode",
        "random",
        "--count",
        "16",
    )
    run("interpolate", "--config", str(config_path), "--checkpoint", checkpoint, "--grid")
    run("eval", "--config", str(config_path), "--checkpoint", checkpoint)
    run(
        "augment",
        "--config",
        str(config_path),
        "--checkpoint",
        checkpoint,
        "--shots",
        "1",
        "--ratio",
        "3",
        "--eta",
        "1.5",
    )
    print(f"\nartifacts under {out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
