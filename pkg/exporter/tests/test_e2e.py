import json
import sys

import pytest
from PIL import Image

from abss_exporter.config import CaptureSpec, ExportConfig
from abss_exporter.e2e import run_end_to_end
from abss_exporter.errors import ExportError
from abss_exporter.pipelines import FakeDitPipeline, FakeUnetPipeline


def unet_config(tmp_path, **kw):
    base = dict(
        model_id="fake:unet", model_family="unet", screen_step=10, total_steps=50,
        guidance_scale=7.5, resolution=512, capture=CaptureSpec(resolution=16),
        seeds=tuple(range(10)), prompts=("A dog walk on the street",),
        words={"p000": {"core_tokens": ["dog"]}}, output_dir=tmp_path / "run",
    )
    base.update(kw)
    return ExportConfig(**base)


def test_end_to_end_keep3_produces_three_images_and_nfe(tmp_path):
    config = unet_config(tmp_path)
    provenance_path = run_end_to_end(config, FakeUnetPipeline(planted_word="dog"), keep=3)
    provenance = json.loads(provenance_path.read_text())
    assert provenance["nfe_per_image"] == pytest.approx(73.33, abs=0.01)
    entry = provenance["prompts"][0]
    assert len(entry["images"]) == 3
    # the fake plants quality that grows with the seed value
    assert entry["selected_seeds"] == [9, 8, 7]
    for name in entry["images"]:
        image = Image.open(provenance_path.parent / name)
        assert image.size == (64, 64)


def test_end_to_end_keep_equals_pool_passes_everything_through(tmp_path):
    config = unet_config(tmp_path, seeds=tuple(range(4)))
    provenance_path = run_end_to_end(config, FakeUnetPipeline(planted_word="dog"), keep=4)
    provenance = json.loads(provenance_path.read_text())
    entry = provenance["prompts"][0]
    assert sorted(entry["selected_seeds"]) == [0, 1, 2, 3]
    assert len(entry["images"]) == 4
    assert provenance["nfe_per_image"] == pytest.approx(50.0, abs=0.01)


def test_end_to_end_dit_pool(tmp_path):
    config = ExportConfig(
        model_id="fake:dit", model_family="dit", screen_step=10, total_steps=50,
        guidance_scale=7.5, resolution=128, capture=CaptureSpec(block=12),
        seeds=tuple(range(6)), prompts=("A dog walk on the street",),
        words={"p000": {"core_tokens": ["dog"]}}, output_dir=tmp_path / "run",
    )
    provenance_path = run_end_to_end(config, FakeDitPipeline(planted_word="dog"), keep=3)
    provenance = json.loads(provenance_path.read_text())
    # (6*(9 + 12/30) + 3*40)/3 with the fake's 30 blocks
    assert provenance["nfe_per_image"] == pytest.approx((6 * 9.4 + 120) / 3, abs=0.01)
    assert len(provenance["prompts"][0]["images"]) == 3


def test_end_to_end_plugin_mode_hands_seeds_downstream(tmp_path):
    config = unet_config(tmp_path, seeds=tuple(range(5)))
    marker_dir = tmp_path / "markers"
    marker_dir.mkdir()
    template = (
        f"{sys.executable} -c "
        f"\"import pathlib; pathlib.Path(r'{marker_dir}/seed_{{seed}}.txt')"
        f".write_text('{{prompt}}')\""
    )
    provenance_path = run_end_to_end(
        config, FakeUnetPipeline(planted_word="dog"), keep=2,
        downstream_command=template,
    )
    provenance = json.loads(provenance_path.read_text())
    entry = provenance["prompts"][0]
    assert entry["images"] == []
    assert len(entry["downstream_runs"]) == 2
    markers = sorted(p.name for p in marker_dir.glob("seed_*.txt"))
    assert markers == [f"seed_{s}.txt" for s in sorted(entry["selected_seeds"])]


def test_end_to_end_requires_words(tmp_path):
    config = unet_config(tmp_path, words=None)
    with pytest.raises(ExportError, match="word-level annotations"):
        run_end_to_end(config, FakeUnetPipeline(planted_word="dog"), keep=3)


def test_end_to_end_multi_prompt(tmp_path):
    config = unet_config(
        tmp_path,
        prompts=("A dog walk on the street", "a cat sits on a mat"),
        words={"p000": {"core_tokens": ["dog"]}, "p001": {"core_tokens": ["cat"]}},
        seeds=tuple(range(4)),
    )
    provenance_path = run_end_to_end(config, FakeUnetPipeline(planted_word="dog"), keep=2)
    provenance = json.loads(provenance_path.read_text())
    assert [p["prompt_id"] for p in provenance["prompts"]] == ["p000", "p001"]
    for entry in provenance["prompts"]:
        assert len(entry["images"]) == 2
