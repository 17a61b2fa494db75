"""diffusers-backed capture (optional extra: pip install 'abss-exporter[diffusers]').

The U-Net path swaps every cross-attention processor for a recording wrapper,
runs the pipeline up to the screening step, and stops it early by raising from
the step-end callback. Captured maps are the text-conditioned branch of the
classifier-free-guidance batch, stacked blocks-outer/heads-inner at the target
spatial resolution; non-matching resolutions are skipped and logged.

The DiT path registers a forward pre-hook on the requested transformer block,
recomputes softmax(Q K^T / sqrt(d)) from the block's own q/k projections on
the joint image+text sequence, averages heads, and aborts the forward pass.
Layouts differ between DiT families; the q/k recompute covers the common
joint-sequence blocks and raises a configuration error otherwise.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .config import ExportConfig
from .errors import CaptureConfigError, ExportError

logger = logging.getLogger(__name__)


class _StopAfterCapture(Exception):
    pass


def _require_torch():
    try:
        import torch  # noqa: F401
        from diffusers import AutoPipelineForText2Image  # noqa: F401
    except ImportError as exc:  # pragma: no cover - exercised only with the extra
        raise ExportError(
            "real-model export needs the optional dependencies: "
            "pip install 'abss-exporter[diffusers]'"
        ) from exc


class _RecordingCrossAttnProcessor:
    """Drop-in attention processor that also stores cross-attention probs."""

    def __init__(self, store: list, target_tokens: int):
        self.store = store
        self.target_tokens = target_tokens
        self.enabled = False

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 attention_mask=None, temb=None, **kwargs):
        import torch

        residual = hidden_states
        input_ndim = hidden_states.ndim
        if input_ndim == 4:
            b, c, h, w = hidden_states.shape
            hidden_states = hidden_states.view(b, c, h * w).transpose(1, 2)
        is_cross = encoder_hidden_states is not None
        context = encoder_hidden_states if is_cross else hidden_states
        if attn.norm_cross and is_cross:
            context = attn.norm_encoder_hidden_states(context)

        query = attn.to_q(hidden_states)
        key = attn.to_k(context)
        value = attn.to_v(context)
        query = attn.head_to_batch_dim(query)
        key = attn.head_to_batch_dim(key)
        value = attn.head_to_batch_dim(value)

        probs = attn.get_attention_scores(query, key, attention_mask)
        if self.enabled and is_cross and probs.shape[-1] == self.target_tokens:
            self.store.append(probs.detach().to(torch.float32).cpu())

        hidden_states = torch.bmm(probs, value)
        hidden_states = attn.batch_to_head_dim(hidden_states)
        hidden_states = attn.to_out[0](hidden_states)
        hidden_states = attn.to_out[1](hidden_states)
        if input_ndim == 4:
            hidden_states = hidden_states.transpose(-1, -2).reshape(b, c, h, w)
        if attn.residual_connection:
            hidden_states = hidden_states + residual
        return hidden_states / attn.rescale_output_factor


class DiffusersUnetPipeline:
    family = "unet"

    def __init__(self, model_id: str, device: str | None = None, dtype=None):
        _require_torch()
        import torch
        from diffusers import AutoPipelineForText2Image

        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.pipe = AutoPipelineForText2Image.from_pretrained(
            model_id, torch_dtype=dtype or (torch.float16 if self.device == "cuda"
                                            else torch.float32),
        ).to(self.device)
        self.pipe.set_progress_bar_config(disable=True)

    def token_strings(self, prompt: str) -> list[str]:
        tokenizer = self.pipe.tokenizer
        ids = tokenizer(prompt, truncation=True,
                        max_length=tokenizer.model_max_length).input_ids
        return tokenizer.convert_ids_to_tokens(ids)

    def _install_processors(self, store: list, token_count: int) -> dict:
        processors = {}
        for name in self.pipe.unet.attn_processors:
            processors[name] = _RecordingCrossAttnProcessor(store, token_count)
        self.pipe.unet.set_attn_processor(processors)
        return processors

    def capture_attention(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        import torch

        res = config.capture.resolution
        token_count = len(self.token_strings(prompt))
        store: list = []
        processors = self._install_processors(store, token_count)

        def step_end(pipe, step, timestep, callback_kwargs):
            # steps are 0-based here; enable recording for screen_step's pass
            for proc in processors.values():
                proc.enabled = (step + 1) == config.screen_step - 1
            if (step + 1) >= config.screen_step:
                raise _StopAfterCapture()
            return callback_kwargs

        for proc in processors.values():
            proc.enabled = config.screen_step == 1
        generator = torch.Generator(self.device).manual_seed(seed)
        try:
            self.pipe(
                prompt,
                num_inference_steps=config.total_steps,
                guidance_scale=config.guidance_scale,
                height=config.resolution, width=config.resolution,
                generator=generator,
                callback_on_step_end=step_end,
            )
        except _StopAfterCapture:
            pass

        maps = []
        skipped = set()
        for probs in store:
            heads_x_batch, q, n = probs.shape
            side = int(math.isqrt(q))
            if side * side != q or side != res:
                skipped.add(q)
                continue
            # CFG batch is [unconditional, conditional]; keep the conditional half
            half = heads_x_batch // 2
            maps.append(probs[half:].numpy())
        if skipped:
            logger.info("skipped cross-attention maps at non-target sizes %s", sorted(skipped))
        if not maps:
            raise CaptureConfigError(
                f"no cross-attention maps at resolution {res}x{res}; "
                "check the capture spec against the model's block resolutions"
            )
        return np.concatenate(maps, axis=0).astype(np.float32)

    def generate(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        import torch

        generator = torch.Generator(self.device).manual_seed(seed)
        image = self.pipe(
            prompt,
            num_inference_steps=config.total_steps,
            guidance_scale=config.guidance_scale,
            height=config.resolution, width=config.resolution,
            generator=generator,
        ).images[0]
        return np.asarray(image)


class DiffusersDitPipeline:
    family = "dit"

    def __init__(self, model_id: str, device: str | None = None, dtype=None):
        _require_torch()
        import torch
        from diffusers import AutoPipelineForText2Image

        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.pipe = AutoPipelineForText2Image.from_pretrained(
            model_id, torch_dtype=dtype or (torch.float16 if self.device == "cuda"
                                            else torch.float32),
        ).to(self.device)
        self.pipe.set_progress_bar_config(disable=True)

    def token_strings(self, prompt: str) -> list[str]:
        tokenizer = self.pipe.tokenizer
        ids = tokenizer(prompt, truncation=True,
                        max_length=tokenizer.model_max_length).input_ids
        return tokenizer.convert_ids_to_tokens(ids)

    def _blocks(self):
        transformer = getattr(self.pipe, "transformer", None)
        if transformer is None:
            raise CaptureConfigError("pipeline has no transformer component to hook")
        blocks = getattr(transformer, "transformer_blocks", None)
        if blocks is None:
            raise CaptureConfigError("transformer exposes no transformer_blocks list")
        return blocks

    def capture_attention(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        import torch

        blocks = self._blocks()
        index = config.capture.block - 1
        if not (0 <= index < len(blocks)):
            raise CaptureConfigError(
                f"block {config.capture.block} outside 1..{len(blocks)}"
            )
        attn = getattr(blocks[index], "attn", None)
        if attn is None or not hasattr(attn, "to_q"):
            raise CaptureConfigError(
                f"block {config.capture.block} has no standard attention module"
            )
        captured: list = []
        armed = [config.screen_step == 1]

        def grab(module, args, kwargs):
            # fires every step; records (and truncates the forward) only at
            # the screening step, after the callback below arms it
            if not armed[0]:
                return
            states = kwargs.get("hidden_states", args[0] if args else None)
            if states is None or states.ndim != 3:
                return
            query = module.to_q(states)
            key = module.to_k(states)
            heads = module.heads
            b, s, inner = query.shape
            head_dim = inner // heads
            query = query.view(b, s, heads, head_dim).transpose(1, 2)
            key = key.view(b, s, heads, head_dim).transpose(1, 2)
            probs = torch.softmax(
                query @ key.transpose(-1, -2) / math.sqrt(head_dim), dim=-1
            )
            # conditional half of the CFG batch, averaged over heads
            probs = probs[b // 2:] if b > 1 else probs
            captured.append(probs.mean(dim=(0, 1)).to(torch.float32).cpu().numpy())
            raise _StopAfterCapture()

        handle = attn.register_forward_pre_hook(grab, with_kwargs=True)

        def step_end(pipe, step, timestep, callback_kwargs):
            armed[0] = (step + 2) == config.screen_step
            if (step + 1) >= config.screen_step:
                raise _StopAfterCapture()
            return callback_kwargs

        generator = torch.Generator(self.device).manual_seed(seed)
        try:
            self.pipe(
                prompt,
                num_inference_steps=config.total_steps,
                guidance_scale=config.guidance_scale,
                height=config.resolution, width=config.resolution,
                generator=generator,
                callback_on_step_end=step_end,
            )
        except _StopAfterCapture:
            pass
        finally:
            handle.remove()
        if not captured:
            raise CaptureConfigError("hook never fired; check the block index")
        return captured[-1]

    def generate(self, prompt: str, seed: int, config: ExportConfig) -> np.ndarray:
        import torch

        generator = torch.Generator(self.device).manual_seed(seed)
        image = self.pipe(
            prompt,
            num_inference_steps=config.total_steps,
            guidance_scale=config.guidance_scale,
            height=config.resolution, width=config.resolution,
            generator=generator,
        ).images[0]
        return np.asarray(image)
