"""abss-export: capture attention pools from a pipeline and optionally run the
full screen-and-generate loop against the engine CLI."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import CaptureSpec, ExportConfig
from .e2e import run_end_to_end
from .errors import ExportError
from .export import export_pool, load_words_file
from .pipelines import load_pipeline


def parse_seeds(text: str) -> tuple[int, ...]:
    """'0..9' or '1,5,7' styles."""
    text = text.strip()
    if ".." in text:
        start, _, stop = text.partition("..")
        return tuple(range(int(start), int(stop) + 1))
    return tuple(int(chunk) for chunk in text.split(",") if chunk.strip())


def load_prompts(path: str) -> tuple[str, ...]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    prompts = tuple(line.strip() for line in lines if line.strip())
    if not prompts:
        raise ExportError(f"{path}: no prompts found")
    return prompts


def _config_from_args(args) -> ExportConfig:
    return ExportConfig(
        model_id=args.model,
        model_family=args.family,
        screen_step=args.t,
        total_steps=args.T,
        guidance_scale=args.guidance,
        resolution=args.resolution,
        capture=CaptureSpec.parse(args.capture),
        seeds=parse_seeds(args.seeds),
        prompts=load_prompts(args.prompts),
        words=load_words_file(args.words) if args.words else None,
        output_dir=Path(args.out),
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True,
                        help="model id, or fake:unet / fake:dit for the synthetic backend")
    parser.add_argument("--family", choices=("unet", "dit"), required=True)
    parser.add_argument("--t", type=int, default=10, help="screening step (default 10)")
    parser.add_argument("--T", type=int, default=50, help="total steps (default 50)")
    parser.add_argument("--guidance", type=float, default=7.5)
    parser.add_argument("--resolution", type=int, default=512)
    parser.add_argument("--capture", default="res=16",
                        help="res=<px> for unet, block=<i>[/<L>] for dit")
    parser.add_argument("--seeds", default="0..9", help="'0..9' or comma list")
    parser.add_argument("--prompts", required=True, help="text file, one prompt per line")
    parser.add_argument("--words", help="word-level annotation JSON")
    parser.add_argument("--out", required=True)
    parser.add_argument("--planted-word",
                        help="fake backends only: word whose attention grows with seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abss-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="capture a pool and write tensors + manifest")
    _add_common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run", help="export, screen via the engine, generate top-K images")
    _add_common(p)
    p.add_argument("--k", type=int, default=3, help="seeds to keep (default 3)")
    p.add_argument("--downstream",
                   help="plug-in mode: command template run per selected seed; "
                        "{seed}, {prompt} and {out} are substituted")
    p.set_defaults(func=cmd_run)

    return parser


def cmd_export(args) -> int:
    config = _config_from_args(args)
    pipeline = load_pipeline(config.model_id, config.model_family, args.planted_word)
    manifest = export_pool(config, pipeline)
    sys.stdout.write(f"{manifest}\n")
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    pipeline = load_pipeline(config.model_id, config.model_family, args.planted_word)
    provenance = run_end_to_end(config, pipeline, args.k,
                                downstream_command=args.downstream)
    sys.stdout.write(f"{provenance}\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ExportError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
