import json
import os

import pytest

from abss_exporter import cli


def write_inputs(tmp_path):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("A dog walk on the street\n")
    words = tmp_path / "words.json"
    words.write_text(json.dumps([{"prompt_id": "p000", "core_tokens": ["dog"]}]))
    return prompts, words


def test_parse_seeds_forms():
    assert cli.parse_seeds("0..9") == tuple(range(10))
    assert cli.parse_seeds("1,5,7") == (1, 5, 7)


def test_cli_export_fake_unet(tmp_path, capsys):
    prompts, words = write_inputs(tmp_path)
    code = cli.main([
        "export", "--model", "fake:unet", "--family", "unet",
        "--t", "10", "--T", "50", "--guidance", "7.5", "--resolution", "512",
        "--capture", "res=16", "--seeds", "0..9",
        "--prompts", str(prompts), "--words", str(words),
        "--out", str(tmp_path / "out"), "--planted-word", "dog",
    ])
    assert code == 0
    manifest = capsys.readouterr().out.strip()
    doc = json.loads(open(manifest).read())
    assert len(doc["records"]) == 10
    assert os.path.isfile(tmp_path / "out" / "annotations.json")


def test_cli_run_fake_unet(tmp_path, capsys):
    prompts, words = write_inputs(tmp_path)
    code = cli.main([
        "run", "--model", "fake:unet", "--family", "unet",
        "--capture", "res=16", "--seeds", "0..9",
        "--prompts", str(prompts), "--words", str(words),
        "--out", str(tmp_path / "out"), "--planted-word", "dog", "--k", "3",
    ])
    assert code == 0
    provenance = json.loads(open(capsys.readouterr().out.strip()).read())
    assert provenance["nfe_per_image"] == pytest.approx(73.33, abs=0.01)
    assert len(provenance["prompts"][0]["images"]) == 3


def test_cli_export_dit(tmp_path, capsys):
    prompts, words = write_inputs(tmp_path)
    code = cli.main([
        "export", "--model", "fake:dit", "--family", "dit",
        "--capture", "block=12/30", "--seeds", "0..5", "--resolution", "128",
        "--prompts", str(prompts), "--words", str(words),
        "--out", str(tmp_path / "out"), "--planted-word", "dog",
    ])
    assert code == 0
    manifest = capsys.readouterr().out.strip()
    records = json.loads(open(manifest).read())["records"]
    assert records[0]["tensor_kind"] == "dit_joint"


def test_cli_bad_capture_spec_exits_2(tmp_path):
    prompts, words = write_inputs(tmp_path)
    code = cli.main([
        "export", "--model", "fake:unet", "--family", "unet",
        "--capture", "blocks=12", "--prompts", str(prompts),
        "--out", str(tmp_path / "out"),
    ])
    assert code == 2


def test_cli_missing_prompts_file_exits_2(tmp_path):
    code = cli.main([
        "export", "--model", "fake:unet", "--family", "unet",
        "--capture", "res=16", "--prompts", str(tmp_path / "nope.txt"),
        "--out", str(tmp_path / "out"),
    ])
    assert code == 2
