from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import CaptureConfigError, ExportError


@dataclass(frozen=True)
class CaptureSpec:
    """What to hook: a U-Net spatial resolution or a DiT block index."""

    resolution: int | None = None
    block: int | None = None
    total_blocks: int | None = None

    @classmethod
    def parse(cls, text: str) -> "CaptureSpec":
        """Parse 'res=16' or 'block=12' (optionally 'block=12/30')."""
        key, _, value = text.partition("=")
        key = key.strip()
        if key == "res":
            return cls(resolution=int(value))
        if key == "block":
            raw, _, total = value.partition("/")
            return cls(block=int(raw), total_blocks=int(total) if total else None)
        raise CaptureConfigError(f"capture spec must be res=<px> or block=<i>[/<L>], got '{text}'")


@dataclass(frozen=True)
class ExportConfig:
    model_id: str
    model_family: str  # "unet" | "dit"
    screen_step: int = 10
    total_steps: int = 50
    guidance_scale: float = 7.5
    resolution: int = 512
    capture: CaptureSpec = field(default_factory=lambda: CaptureSpec(resolution=16))
    seeds: tuple[int, ...] = tuple(range(10))
    prompts: tuple[str, ...] = ()
    words: dict[str, dict] | None = None  # prompt_id -> word-level annotation
    output_dir: Path = Path("export-out")

    def __post_init__(self):
        if self.model_family not in ("unet", "dit"):
            raise ExportError(f"model_family must be unet or dit, got {self.model_family}")
        if not (1 <= self.screen_step <= self.total_steps):
            raise ExportError(
                f"screen step {self.screen_step} outside 1..{self.total_steps}"
            )
        if not self.seeds:
            raise ExportError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ExportError("seed list contains duplicates")
        if not self.prompts:
            raise ExportError("prompt list is empty")
        if self.model_family == "unet" and self.capture.resolution is None:
            raise CaptureConfigError("unet export needs a res=<px> capture spec")
        if self.model_family == "dit" and self.capture.block is None:
            raise CaptureConfigError("dit export needs a block=<i> capture spec")
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def prompt_id(self, index: int) -> str:
        return f"p{index:03d}"
