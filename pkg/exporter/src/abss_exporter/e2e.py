"""End-to-end screening: export, score+rank through the engine CLI, then run
full generation only for the selected seeds.

The selected seeds are re-run from step 0 rather than resumed from cached
step-t latents: the images then match a plain generation with that seed
exactly, at the price of repeating t steps of real compute. The NFE figures in
the provenance file use the screening cost model, which assumes resumption;
the delta is documented rather than hidden.

In plug-in mode the selected seeds are handed to a downstream command template
instead of the built-in generator, so the screener can front any seed or
noise optimizer.
"""

from __future__ import annotations

import json
import shlex
import shutil
import subprocess
import sys
from pathlib import Path

from PIL import Image

from .config import ExportConfig
from .errors import ExportError
from .export import export_pool

DEFAULT_DIT_TOTAL_BLOCKS = 30


def engine_command() -> list[str]:
    """The engine CLI: the `abss` script if on PATH, else `python -m abss`."""
    exe = shutil.which("abss")
    if exe:
        return [exe]
    return [sys.executable, "-m", "abss"]


def run_engine(args: list[str]) -> None:
    command = engine_command() + args
    proc = subprocess.run(command, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ExportError(
            f"engine command {' '.join(args[:2])} failed with exit "
            f"{proc.returncode}: {proc.stderr.strip()}"
        )


def _rankings(doc: dict) -> list[dict]:
    return doc["rankings"] if "rankings" in doc else [doc]


def run_end_to_end(config: ExportConfig, pipeline, keep: int,
                   downstream_command: str | None = None,
                   dit_total_blocks: int | None = None) -> Path:
    """Screen the pool and produce images (or downstream runs) for the top seeds.

    Returns the provenance JSON path. Requires word-level annotations in the
    config so the engine has core tokens to score.
    """
    if config.words is None:
        raise ExportError("end-to-end runs need word-level annotations (words=...)")
    if not (1 <= keep <= len(config.seeds)):
        raise ExportError(f"keep={keep} outside 1..{len(config.seeds)}")
    out = Path(config.output_dir)
    manifest = export_pool(config, pipeline)
    scores_path = out / "scores.json"
    ranking_path = out / "ranking.json"
    run_engine(["score", "--manifest", str(manifest),
                "--annotations", str(out / "annotations.json"),
                "--out", str(scores_path)])
    if config.model_family == "unet":
        nfe_spec = (f"N={len(config.seeds)},t={config.screen_step},"
                    f"T={config.total_steps},family=unet")
    else:
        total_blocks = (dit_total_blocks
                        or config.capture.total_blocks
                        or getattr(pipeline, "total_blocks", DEFAULT_DIT_TOTAL_BLOCKS))
        nfe_spec = (f"N={len(config.seeds)},t={config.screen_step},"
                    f"T={config.total_steps},family=dit,"
                    f"l={config.capture.block},L={total_blocks}")
    run_engine(["rank", "--scores", str(scores_path), "--k", str(keep),
                "--nfe", nfe_spec, "--out", str(ranking_path)])

    ranking_doc = json.loads(ranking_path.read_text())
    prompt_by_id = {config.prompt_id(i): p for i, p in enumerate(config.prompts)}
    prompt_entries = []
    nfe_per_image = None
    for ranking in _rankings(ranking_doc):
        prompt_id = ranking["prompt_id"]
        prompt = prompt_by_id[prompt_id]
        selected = [int(s) for s in ranking["selected"]]
        nfe_per_image = ranking["nfe"]["nfe_per_image"]
        images = []
        downstream_runs = []
        for seed in selected:
            if downstream_command is not None:
                command = downstream_command.format(seed=seed, prompt=prompt,
                                                    out=str(out))
                subprocess.run(shlex.split(command), check=True)
                downstream_runs.append(command)
            else:
                image = pipeline.generate(prompt, seed, config)
                image_path = out / f"{prompt_id}_seed{seed:05d}.png"
                Image.fromarray(image).save(image_path)
                images.append(image_path.name)
        prompt_entries.append({
            "prompt_id": prompt_id,
            "prompt": prompt,
            "selected_seeds": selected,
            "images": images,
            "downstream_runs": downstream_runs,
        })

    provenance = {
        "model": config.model_id,
        "model_family": config.model_family,
        "pool_size": len(config.seeds),
        "keep": keep,
        "screen_step": config.screen_step,
        "total_steps": config.total_steps,
        "guidance_scale": config.guidance_scale,
        "capture": {"resolution": config.capture.resolution,
                    "block": config.capture.block},
        "nfe_per_image": nfe_per_image,
        "resume_strategy": "rerun-from-step-0",
        "prompts": prompt_entries,
        "engine_outputs": {"scores": scores_path.name, "ranking": ranking_path.name},
    }
    provenance_path = out / "provenance.json"
    with open(provenance_path, "w", encoding="utf-8") as fh:
        json.dump(provenance, fh, indent=2)
        fh.write("\n")
    return provenance_path
