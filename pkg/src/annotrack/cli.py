"""Command-line entry points: simulation benchmarks, head training, API server."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .features import GradientFeatureExtractor
from .guidance import (
    GuidanceConfig,
    RankingHeadParams,
    TrainConfig,
    head_accuracy,
    load_head,
    prepare_examples,
    read_training_pairs,
    save_head,
    train_head,
)
from .interp import InterpConfig
from .media import (
    load_frame_sequence,
    load_mot_ground_truth,
    load_scene_spec,
    load_single_object_track,
    synth_generate,
)
from .simulate import SimulationConfig, run_benchmark, write_curves

logger = logging.getLogger(__name__)


def _load_dataset(root: Path, fmt: str, seed: int):
    """Yield (store, truth-track) pairs for one of the supported dataset layouts."""
    dataset = []
    if fmt == "synth":
        specs = sorted(root.glob("*.yaml")) + sorted(root.glob("*.yml"))
        if not specs:
            raise SystemExit(f"no scene specs (*.yaml) under {root}")
        for path in specs:
            store, tracks = synth_generate(load_scene_spec(path), seed)
            dataset.extend((store, t) for t in tracks)
    elif fmt == "mot":
        for seq in sorted(p for p in root.iterdir() if p.is_dir()):
            gt = seq / "gt" / "gt.txt"
            frames = seq / "img1"
            if not gt.exists() or not frames.is_dir():
                continue
            store = load_frame_sequence(frames)
            dataset.extend((store, t) for t in load_mot_ground_truth(gt))
    elif fmt == "single":
        for seq in sorted(p for p in root.iterdir() if p.is_dir()):
            gt = seq / "groundtruth.txt"
            frames = seq / "img"
            if not gt.exists() or not frames.is_dir():
                continue
            store = load_frame_sequence(frames)
            dataset.append((store, load_single_object_track(gt, object_id=seq.name)))
    else:
        raise SystemExit(f"unknown dataset format {fmt!r}")
    if not dataset:
        raise SystemExit(f"no tracks found under {root} with format {fmt}")
    return dataset


def _parse_policy(value: str):
    """uniform:<stride> | guided:<params-file> | oracle"""
    if value == "oracle":
        return "oracle", None, None
    if value.startswith("uniform"):
        stride = int(value.split(":", 1)[1]) if ":" in value else 40
        return "uniform", stride, None
    if value.startswith("guided"):
        if ":" not in value:
            raise SystemExit("guided policy needs a parameter file: guided:<params>")
        return "guided", None, load_head(value.split(":", 1)[1])
    raise SystemExit(f"unknown policy {value!r}")


def annosim_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="annosim", description="Simulated annotation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate annotation over a dataset and emit a curve CSV")
    run.add_argument("--dataset", required=True, type=Path)
    run.add_argument("--format", choices=["mot", "single", "synth"], default="synth")
    run.add_argument("--strategy", choices=["linear", "tracking", "visual"], default="visual")
    run.add_argument("--policy", default="uniform:40", help="uniform:<stride> | guided:<params> | oracle")
    run.add_argument("--iou", type=float, default=0.7)
    run.add_argument("--budget", type=int, default=3)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", type=Path, default=Path("curves.csv"))
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    policy, stride, head = _parse_policy(args.policy)
    dataset = _load_dataset(args.dataset, args.format, args.seed)
    config = SimulationConfig(
        strategy=args.strategy,
        policy=policy,
        stride=stride or 40,
        budget=args.budget,
        tau=args.iou,
        seed=args.seed,
        head=head,
    )
    rows = run_benchmark(dataset, [config], GradientFeatureExtractor())
    write_curves(rows, args.out)
    for r in rows:
        print(f"{r.strategy}/{r.policy}: boxes={r.boxes_per_track:.2f} recall@{args.iou}={r.recall:.3f} time={r.sim_time_s:.1f}s")
    return 0


def guidance_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="guidance", description="Ranking head training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train the ranking head on a pair file")
    train.add_argument("--pairs", required=True, type=Path)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--out", required=True, type=Path)

    ev = sub.add_parser("eval", help="pair accuracy of a trained head")
    ev.add_argument("--pairs", required=True, type=Path)
    ev.add_argument("--params", required=True, type=Path)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    extractor = GradientFeatureExtractor()
    pairs = read_training_pairs(args.pairs)
    if not pairs:
        raise SystemExit(f"no training pairs in {args.pairs}")
    examples = prepare_examples(pairs, extractor)

    if args.command == "train":
        frames = len(pairs[0].reference_frames) + 2
        init = RankingHeadParams.random(np.random.default_rng(args.seed), extractor.channels, frames)
        params, history = train_head(examples, init, TrainConfig(seed=args.seed, epochs=args.epochs))
        save_head(params, args.out)
        print(f"trained on {len(examples)} pairs; val accuracy {history['val_accuracy'][-1] if history['val_accuracy'] else float('nan'):.3f}")
        print(f"saved {args.out}")
        return 0

    params = load_head(args.params)
    acc = head_accuracy(params, examples)
    print(f"accuracy: {acc:.4f} over {len(examples)} pairs")
    return 0


def serve_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="annotrack-serve", description="Annotation HTTP API")
    parser.add_argument("--data-root", required=True, type=Path)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--head", type=Path, default=None, help="trained ranking-head parameters")
    args = parser.parse_args(argv)

    import uvicorn

    from .service import AnnotationService, create_app

    service = AnnotationService(args.data_root, head_path=args.head)
    uvicorn.run(create_app(service), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(annosim_main())
