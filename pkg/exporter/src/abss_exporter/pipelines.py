"""Pipeline backends the exporter can drive.

A backend exposes three duck-typed methods:

    token_strings(prompt)            -> list[str], BOS first, EOS last
    capture_attention(prompt, seed, config) -> np.ndarray
        unet family: (m, q, n) stacked cross-attention maps at the capture
        resolution after running `config.screen_step` denoising steps;
        dit family: (M+N, M+N) head-averaged row-stochastic joint matrix
        from the hooked block at that step.
    generate(prompt, seed, config)   -> (H, W, 3) uint8 image from a full
        total_steps run with the same seed.

`fake:unet` and `fake:dit` are deterministic numpy backends used by the test
suite and for demos without a GPU: attention is random but a configurable
planted word receives extra mass that grows with the seed value, so seed
quality is known by construction. Real models are served by
diffusers_adapter.load_pipeline.
"""

from __future__ import annotations

import zlib

import numpy as np

from .config import ExportConfig
from .errors import ExportError
from .tokens import find_word_spans


def _stable_seed(*parts) -> int:
    text = "|".join(str(p) for p in parts)
    return zlib.crc32(text.encode("utf-8"))


def _softmax(logits: np.ndarray) -> np.ndarray:
    logits = logits - logits.max(axis=-1, keepdims=True)
    out = np.exp(logits)
    return out / out.sum(axis=-1, keepdims=True)


class FakeTokenizer:
    """Tiny BPE-flavored tokenizer: words longer than 5 characters split in two."""

    BOS = "<|startoftext|>"
    EOS = "<|endoftext|>"

    def token_strings(self, prompt: str) -> list[str]:
        tokens = [self.BOS]
        for word in prompt.lower().split():
            word = "".join(ch for ch in word if ch.isalnum())
            if not word:
                continue
            if len(word) > 5:
                half = len(word) // 2
                tokens.extend([word[:half], word[half:] + "</w>"])
            else:
                tokens.append(word + "</w>")
        tokens.append(self.EOS)
        return tokens


class FakeUnetPipeline:
    """Deterministic stand-in for a U-Net text-to-image pipeline."""

    family = "unet"

    def __init__(self, planted_word: str | None = None, heads: int = 4, blocks: int = 2):
        self.tokenizer = FakeTokenizer()
        self.planted_word = planted_word
        self.stacked_maps = heads * blocks

    def token_strings(self, prompt: str) -> list[str]:
        return self.tokenizer.token_strings(prompt)

    def _planted_columns(self, tokens: list[str]) -> list[int]:
        if not self.planted_word:
            return []
        spans = find_word_spans(tokens, self.planted_word)
        return sorted({i for span in spans for i in span})

    def capture_attention(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        res = config.capture.resolution
        tokens = self.token_strings(prompt)
        n = len(tokens)
        gen = np.random.default_rng(_stable_seed("unet", prompt, seed, config.screen_step))
        logits = gen.random((self.stacked_maps, res * res, n)) * 0.05
        columns = self._planted_columns(tokens)
        if columns:
            strength = min(1.0, config.screen_step / 10.0)
            logits[:, :, columns] += 0.6 * (seed % 10) / 9.0 * strength
        return _softmax(logits).astype(np.float32)

    def generate(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        gen = np.random.default_rng(_stable_seed("image", prompt, seed, config.total_steps))
        side = 64
        base = gen.integers(0, 255, size=(side, side, 3), dtype=np.uint8)
        ramp = np.linspace(0, 255, side, dtype=np.uint8)
        base[:, :, 0] = ramp[None, :]
        return base


class FakeDitPipeline:
    """Deterministic stand-in for a DiT pipeline with joint self-attention."""

    family = "dit"

    def __init__(self, planted_word: str | None = None, patch: int = 16,
                 total_blocks: int = 30):
        self.tokenizer = FakeTokenizer()
        self.planted_word = planted_word
        self.patch = patch
        self.total_blocks = total_blocks

    def token_strings(self, prompt: str) -> list[str]:
        return self.tokenizer.token_strings(prompt)

    def image_token_count(self, config: ExportConfig) -> int:
        return max(1, config.resolution // self.patch) ** 2

    def capture_attention(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        tokens = self.token_strings(prompt)
        n = len(tokens)
        m = self.image_token_count(config)
        side = m + n
        gen = np.random.default_rng(
            _stable_seed("dit", prompt, seed, config.screen_step, config.capture.block)
        )
        logits = gen.random((side, side)) * 0.05
        if self.planted_word:
            spans = find_word_spans(tokens, self.planted_word)
            columns = sorted({m + i for span in spans for i in span})
            if columns:
                logits[:m, columns] += 0.6 * (seed % 10) / 9.0
        return _softmax(logits).astype(np.float32)

    def generate(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        gen = np.random.default_rng(_stable_seed("dit-image", prompt, seed, config.total_steps))
        side = 64
        return gen.integers(0, 255, size=(side, side, 3), dtype=np.uint8)


def load_pipeline(model_id: str, family: str, planted_word: str | None = None):
    """Resolve a model id to a backend; 'fake:unet' / 'fake:dit' are built in."""
    if model_id == "fake:unet":
        return FakeUnetPipeline(planted_word=planted_word)
    if model_id == "fake:dit":
        return FakeDitPipeline(planted_word=planted_word)
    from . import diffusers_adapter

    if family == "unet":
        return diffusers_adapter.DiffusersUnetPipeline(model_id)
    if family == "dit":
        return diffusers_adapter.DiffusersDitPipeline(model_id)
    raise ExportError(f"cannot resolve pipeline for model '{model_id}' family '{family}'")
