"""abss: attention-based seed screening for diffusion model inference.

Scores diffusion seeds from early-step attention captures (U-Net cross
attention or DiT joint self-attention), ranks them, keeps the top-K, and
accounts for the screened pipeline's cost in denoising-model forward passes.
"""

from .attn_io import (
    AttnTensor,
    ModelFamily,
    SeedRecord,
    TensorKind,
    load_manifest,
    load_tensor,
    peek_shape,
    read_tensor,
    save_manifest,
    save_tensor,
    write_tensor,
)
from .errors import (
    AbssError,
    DegenerateSampleError,
    ManifestConsistencyError,
    ManifestSchemaError,
    ShapeError,
    TensorFormatError,
    TensorTruncationError,
    TensorValidationError,
    TokenIndexError,
    UsageError,
)
from .evaluation import (
    AblationRow,
    NdcgResult,
    QualityTable,
    SweepRow,
    corrupt_annotations,
    load_quality,
    ndcg,
    overlap_rate,
    timestep_sweep,
    token_ablation,
)
from .scoring import (
    ScoreTable,
    ScoringConfig,
    TokenAnnotation,
    TokenCategory,
    aggregate_unet,
    gaussian_kernel_1d,
    gaussian_kernel_2d,
    load_annotations,
    save_annotations,
    score_dit,
    score_pool,
    score_unet,
    sharpen,
    smooth_1d,
    smooth_2d,
)
from .selection import (
    BaselineNfe,
    NfeReport,
    RankingResult,
    nfe_baseline,
    nfe_dit,
    nfe_report,
    nfe_unet,
    rank,
)
from .stats import (
    PairedSamples,
    TTestResult,
    format_p_value,
    paired_t_test,
    regularized_incomplete_beta,
    student_t_cdf,
)
from .synth import SynthSpec, generate_fixture_suite, generate_pool, planted_quality

__version__ = "0.1.0"

__all__ = [
    "AblationRow", "AbssError", "AttnTensor", "BaselineNfe", "DegenerateSampleError",
    "ManifestConsistencyError", "ManifestSchemaError", "ModelFamily", "NdcgResult",
    "NfeReport", "PairedSamples", "QualityTable", "RankingResult", "ScoreTable",
    "ScoringConfig", "SeedRecord", "ShapeError", "SweepRow", "SynthSpec",
    "TTestResult", "TensorFormatError", "TensorKind", "TensorTruncationError",
    "TensorValidationError", "TokenAnnotation", "TokenCategory", "TokenIndexError",
    "UsageError", "aggregate_unet", "corrupt_annotations", "format_p_value",
    "gaussian_kernel_1d", "gaussian_kernel_2d", "generate_fixture_suite",
    "generate_pool", "load_annotations", "load_manifest", "load_quality",
    "load_tensor", "ndcg", "nfe_baseline", "nfe_dit", "nfe_report", "nfe_unet",
    "overlap_rate", "paired_t_test", "peek_shape", "planted_quality", "rank",
    "read_tensor", "regularized_incomplete_beta", "save_annotations",
    "save_manifest", "save_tensor", "score_dit", "score_pool", "score_unet",
    "sharpen", "smooth_1d", "smooth_2d", "student_t_cdf", "timestep_sweep",
    "token_ablation", "write_tensor",
]
