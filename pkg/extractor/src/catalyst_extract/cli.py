"""catalyst-extract: dump CNN features into the interchange formats."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionJob, extract, make_proxy
from .hooks import REGISTRY


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catalyst-extract",
        description="Export pre-pooling activation maps, logits, and the classifier head "
                    "from a frozen CNN, plus an optional pixel-noise proxy split.",
    )
    parser.add_argument("--model", required=True, help=f"one of: {', '.join(sorted(REGISTRY))}")
    parser.add_argument("--data", required=True, help="image directory or (n, 3, h, w) .npy file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--layer", help="module path override for the capture point")
    parser.add_argument("--proxy-sigma", type=float, default=0.2,
                        help="pixel-noise sigma for the proxy split (default 0.2)")
    parser.add_argument("--with-proxy", action="store_true",
                        help="also write a noise-corrupted proxy split (role=ood)")
    parser.add_argument("--no-clip", action="store_true",
                        help="do not clip noisy pixels back into [0, 1]")
    parser.add_argument("--pretrained", action="store_true",
                        help="load pretrained weights (downloads if not cached); "
                             "default is seeded random init")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--limit", type=int, help="use only the first N images")
    parser.add_argument("--name", default="features", help="dump base name")
    parser.add_argument("--role", default="id_val",
                        choices=["id_train", "id_val", "id_test", "ood"])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    job = ExtractionJob(
        model_name=args.model,
        dataset_path=args.data,
        output_dir=args.out,
        layer_selector=args.layer,
        batch_size=args.batch_size,
        noise_sigma=args.proxy_sigma,
        device=args.device,
        seed=args.seed,
        pretrained=args.pretrained,
        limit=args.limit,
        clip_noisy_pixels=not args.no_clip,
        name=args.name,
        role=args.role,
    )
    try:
        info = extract(job)
        print(f"extracted {info.n_samples} samples: n={info.n_channels}, k={info.spatial_k}, "
              f"C={info.n_classes} -> {info.manifest_path}")
        if args.with_proxy:
            proxy = make_proxy(job)
            print(f"proxy split (sigma={args.proxy_sigma}): {proxy.n_samples} samples "
                  f"-> {proxy.manifest_path}")
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
