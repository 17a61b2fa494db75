"""abss-exporter: attention capture front-end for the abss screening engine."""

from .attn_format import write_attn_tensor, write_manifest
from .config import CaptureSpec, ExportConfig
from .e2e import run_end_to_end
from .errors import CaptureConfigError, ExportError
from .export import export_pool, load_words_file
from .pipelines import FakeDitPipeline, FakeUnetPipeline, load_pipeline
from .tokens import map_core_words

__version__ = "0.1.0"

__all__ = [
    "CaptureConfigError", "CaptureSpec", "ExportConfig", "ExportError",
    "FakeDitPipeline", "FakeUnetPipeline", "export_pool", "load_pipeline",
    "load_words_file", "map_core_words", "run_end_to_end", "write_attn_tensor",
    "write_manifest",
]
