"""Real-model smoke test: runs only when a diffusers install and a model id
are available (set ABSS_EXPORT_MODEL, e.g. to a local SD 1.x checkout).
Needs an accelerator to finish in reasonable time; skipping it does not block
anything else."""

import importlib.util
import json
import os

import pytest

requires_real = pytest.mark.skipif(
    importlib.util.find_spec("diffusers") is None or "ABSS_EXPORT_MODEL" not in os.environ,
    reason="needs diffusers and ABSS_EXPORT_MODEL",
)


@requires_real
def test_real_unet_pool_roundtrip(tmp_path):
    from abss_exporter.config import CaptureSpec, ExportConfig
    from abss_exporter.e2e import run_end_to_end
    from abss_exporter.pipelines import load_pipeline

    config = ExportConfig(
        model_id=os.environ["ABSS_EXPORT_MODEL"], model_family="unet",
        screen_step=10, total_steps=50, guidance_scale=7.5, resolution=512,
        capture=CaptureSpec(resolution=16), seeds=tuple(range(10)),
        prompts=("A dog walk on the street",),
        words={"p000": {"core_tokens": ["dog"]}},
        output_dir=tmp_path / "real",
    )
    pipeline = load_pipeline(config.model_id, "unet")
    provenance_path = run_end_to_end(config, pipeline, keep=3)
    provenance = json.loads(provenance_path.read_text())
    assert provenance["nfe_per_image"] == pytest.approx(73.33, abs=0.01)
    assert len(provenance["prompts"][0]["images"]) == 3
