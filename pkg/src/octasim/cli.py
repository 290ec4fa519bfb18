"""Command line interface: generate / inspect / validate.

Exit codes: 0 success, 1 partial failure (some samples failed or validation
found problems), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as config_mod
from . import pipeline


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octasim",
        description="Synthetic en-face angiography dataset generator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset")
    gen.add_argument("--count", type=int, required=True, help="number of samples")
    gen.add_argument("--seed", type=int, default=0, help="master seed")
    gen.add_argument("--config", type=str, default=None, help="config JSON file")
    gen.add_argument("--out", type=str, required=True, help="output directory")
    gen.add_argument("--parallel", type=int, default=1, help="worker processes")
    gen.add_argument(
        "--diversify", action="store_true",
        help="rewrite reasoning through the configured teacher endpoint",
    )
    gen.add_argument(
        "--healthy-fraction", type=float, default=None,
        help="override the fraction of pathology-free samples",
    )

    ins = sub.add_parser("inspect", help="print one sample's metadata and text")
    ins.add_argument("--id", type=str, required=True, help="zero-padded sample id")
    ins.add_argument("--out", type=str, required=True, help="dataset directory")

    val = sub.add_parser("validate", help="re-run invariant checks over a dataset")
    val.add_argument("--out", type=str, required=True, help="dataset directory")
    val.add_argument("--config", type=str, default=None, help="config JSON file")
    return parser


def _cmd_generate(args) -> int:
    config = config_mod.load_config(args.config)
    if args.diversify:
        config["teacher"]["enabled"] = True
    if args.healthy_fraction is not None:
        if not 0.0 <= args.healthy_fraction <= 1.0:
            raise config_mod.ConfigError("healthy fraction must lie in [0,1]")
        config["run"]["healthy_fraction"] = args.healthy_fraction
    manifest = pipeline.generate_dataset(
        count=args.count,
        master_seed=args.seed,
        config=config,
        out_dir=args.out,
        parallelism=max(1, args.parallel),
    )
    print(
        f"wrote {len(manifest.rows)} samples to {args.out} "
        f"(summary: {manifest.summary}, config digest {manifest.config_digest[:12]})"
    )
    if manifest.failed:
        print(f"FAILED samples: {', '.join(manifest.failed)}", file=sys.stderr)
        return 1
    return 0


def _cmd_inspect(args) -> int:
    out_dir = Path(args.out)
    meta_path = out_dir / "meta" / f"{args.id}.json"
    if not meta_path.exists():
        print(f"no metadata for sample {args.id}", file=sys.stderr)
        return 1
    print(meta_path.read_text(encoding="utf-8"))
    conv_path = out_dir / "conversations.jsonl"
    if conv_path.exists():
        for line in conv_path.read_text(encoding="utf-8").splitlines():
            doc = json.loads(line)
            if doc["id"] == args.id:
                print(f"\nQ: {doc['question']}\n\nA: {doc['answer']}")
                break
    return 0


def _cmd_validate(args) -> int:
    config = config_mod.load_config(args.config)
    problems = pipeline.validate_dataset(args.out, config)
    if problems:
        for problem in problems:
            print(f"INVALID: {problem}", file=sys.stderr)
        return 1
    print(f"dataset at {args.out} passed all invariant checks")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        return _cmd_validate(args)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
