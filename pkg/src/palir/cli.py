"""Command-line entry points for the retrieval engine.

Subcommands cover the offline pipeline end to end: palette extraction
from images, synthetic-bundle generation and validation, confidence
scoring, training, evaluation, and the HTTP service.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _cmd_extract_palette(args) -> int:
    from PIL import Image

    from palir.palette import MaskedImage, PaletteConfig, PaletteError, extract_palette

    config = PaletteConfig(
        theta_cluster=args.theta_cluster,
        theta_min=args.theta_min,
        theta_cum=args.theta_cum,
        max_colors=args.max_colors,
        seed=args.seed,
    )
    images_dir = Path(args.images)
    masks_dir = Path(args.masks)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    image_files = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not image_files:
        print(f"no images found in {images_dir}", file=sys.stderr)
        return 1

    written = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for image_file in image_files:
            mask_file = None
            for suffix in IMAGE_SUFFIXES:
                candidate = masks_dir / f"{image_file.stem}{suffix}"
                if candidate.is_file():
                    mask_file = candidate
                    break
            if mask_file is None:
                print(f"skipping {image_file.name}: no mask", file=sys.stderr)
                continue
            pixels = np.asarray(Image.open(image_file).convert("RGB"))
            mask = np.asarray(Image.open(mask_file).convert("L")) > 0
            try:
                palette = extract_palette(MaskedImage(pixels, mask), config)
            except PaletteError as e:
                print(f"skipping {image_file.name}: {e}", file=sys.stderr)
                continue
            out.write(json.dumps(
                {"id": image_file.stem, "colors": palette.to_hex()},
                separators=(", ", ": "),
            ) + "\n")
            written += 1
    print(f"wrote {written} palettes to {out_path}")
    return 0


def _cmd_gen_synth(args) -> int:
    from palir.data import SyntheticConfig, generate_synthetic, save_bundle

    config = SyntheticConfig(
        n_records=args.records,
        n_concepts=args.concepts,
        dims=args.dims,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        n_val=args.val,
        n_test=args.test,
    )
    bundle = generate_synthetic(config)
    save_bundle(bundle, args.out)
    print(f"wrote bundle with {len(bundle)} records to {args.out} "
          f"({len(bundle.confidences)} confidence records)")
    return 0


def _cmd_validate_bundle(args) -> int:
    from palir.data import BundleError, load_bundle

    try:
        bundle = load_bundle(args.bundle)
    except BundleError as e:
        print(f"INVALID: {e}", file=sys.stderr)
        return 1
    splits = {s: len(bundle.split_indices(s)) for s in ("train", "val", "test")}
    print(f"OK: {len(bundle)} records {splits}, "
          f"{len(bundle.confidences)} confidence records")
    return 0


def _cmd_build_confidence(args) -> int:
    from palir.crc import (
        FileConfidenceProvider,
        MockConfidenceProvider,
        RemoteConfidenceProvider,
        build_Z,
        compute_candidates,
        score_candidates,
    )
    from palir.data import load_bundle, save_bundle

    bundle = load_bundle(args.bundle)
    if args.provider == "file":
        provider = FileConfidenceProvider(bundle)
    elif args.provider == "mock":
        provider = MockConfidenceProvider(bundle)
    else:
        if not args.endpoint:
            print("remote provider needs --endpoint", file=sys.stderr)
            return 1
        provider = RemoteConfidenceProvider(args.endpoint)

    candidates = compute_candidates(bundle, args.n_cand, splits=tuple(args.splits))
    records = score_candidates(bundle, provider, candidates)
    bundle.confidences = records
    save_bundle(bundle, args.bundle)
    zset = build_Z(records, candidates, args.theta)
    print(f"scored {len(records)} candidate pairs; "
          f"|Z| = {len(zset)} at theta={args.theta}")
    return 0


def _cmd_train(args) -> int:
    from palir.crc import CrcWeights, build_Z, compute_candidates
    from palir.data import load_bundle
    from palir.model import save_checkpoint
    from palir.training import TrainConfig, default_model_config, train

    bundle = load_bundle(args.bundle)
    candidates = compute_candidates(bundle, args.n_cand, splits=("train",))
    zset = build_Z(bundle.confidences, candidates, args.theta)
    config = TrainConfig(
        lr=args.lr,
        batch=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        weights=CrcWeights(args.lambda_up, args.lambda_n),
        loss_mode=args.loss,
        model=default_model_config(bundle, d=args.d),
    )
    result = train(bundle, zset, config, candidates=candidates)
    save_checkpoint(result.params, args.out)

    history_path = Path(args.history) if args.history else Path(args.out).with_suffix(".history.jsonl")
    with open(history_path, "w", encoding="utf-8") as f:
        for entry in result.history:
            f.write(json.dumps(entry) + "\n")
    print(f"best epoch {result.best_epoch} "
          f"(val recall@1 = {result.best_val_recall1:.4f}); "
          f"checkpoint -> {args.out}, history -> {history_path}")
    return 0


def _cmd_eval(args) -> int:
    from palir.data import load_bundle
    from palir.model import load_checkpoint
    from palir.training import evaluate

    bundle = load_bundle(args.bundle)
    params = load_checkpoint(args.ckpt)
    ks = tuple(int(k) for k in args.k.split(","))
    report = evaluate(bundle, params, args.split, ks=ks)
    payload = {
        "split": args.split,
        "mrr": report.mrr,
        **{f"recall@{k}": v for k, v in report.recall_at.items()},
    }
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from palir.data import load_bundle
    from palir.model import load_checkpoint
    from palir.service import SearchService, create_app

    bundle = load_bundle(args.bundle)
    params = load_checkpoint(args.ckpt)
    service = SearchService(
        bundle, params, corpus=args.corpus, images_dir=args.images
    )
    app = create_app(service, ui_dir=args.ui_dir)
    print(f"indexed {len(service.corpus_indices)} images; "
          f"serving on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="palir", description="palette-aware text-to-image retrieval engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-palette", help="extract palette queries from masked images")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--theta-cluster", type=float, default=20.0)
    p.add_argument("--theta-min", type=float, default=0.05)
    p.add_argument("--theta-cum", type=float, default=0.90)
    p.add_argument("--max-colors", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_extract_palette)

    p = sub.add_parser("gen-synth", help="generate a synthetic planted-structure bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--records", type=int, required=True)
    p.add_argument("--concepts", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--val", type=int, default=None)
    p.add_argument("--test", type=int, default=None)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("validate-bundle", help="check bundle files and invariants")
    p.add_argument("bundle")
    p.set_defaults(func=_cmd_validate_bundle)

    p = sub.add_parser("build-confidence", help="prefilter candidates and score them")
    p.add_argument("--bundle", required=True)
    p.add_argument("--n-cand", type=int, default=30)
    p.add_argument("--provider", choices=("file", "mock", "remote"), default="file")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--splits", nargs="+", default=["train"])
    p.set_defaults(func=_cmd_build_confidence)

    p = sub.add_parser("train", help="train the fusion heads with the relaxed loss")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--lambda-up", type=float, default=0.7)
    p.add_argument("--lambda-n", type=float, default=0.7)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=("crc", "infonce-ablation", "crc-fixed-c"),
                   default="crc")
    p.add_argument("--n-cand", type=int, default=30)
    p.add_argument("--d", type=int, default=None,
                   help="model width (default: max channel dim)")
    p.add_argument("--history", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="rank a split and report MRR / recall@K")
    p.add_argument("--bundle", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--k", default="1,10")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="run the interactive search service")
    p.add_argument("--bundle", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--images", default=None)
    p.add_argument("--ui-dir", default=None)
    p.add_argument("--corpus", choices=("test", "all"), default="test")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
