"""Mixed-precision random projection: low-precision Gaussian sketches,
emulated Tensor-Core GEMM with error correction, and the randomized
SVD / HOSVD pipelines built on them."""

__version__ = "0.1.0"

from .floatfmt import FloatFormat, RoundingMode, get_format, round_to  # noqa: E402
from .mpgemm import gemm_ref, shgemm, split, tcec_sgemm  # noqa: E402
from .randnla import ProjectionConfig, rp_hosvd, rsvd  # noqa: E402

__all__ = [
    "__version__",
    "FloatFormat",
    "RoundingMode",
    "get_format",
    "round_to",
    "split",
    "shgemm",
    "tcec_sgemm",
    "gemm_ref",
    "ProjectionConfig",
    "rsvd",
    "rp_hosvd",
]
