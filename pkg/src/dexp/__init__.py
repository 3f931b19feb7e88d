"""Explain cosine distances between embedded items by randomized masking.

The core loop: mask the explained image many times, embed every masked
variant, rank the masks by their distance to a reference embedding, and
average the most and least distance-preserving masks into a signed
per-pixel attribution map (positive values mark regions that pull the
items closer together).
"""

from .bridge import BridgeEmbedder
from .embedders import (
    EmbedderDescriptor,
    PatchMeanEmbedder,
    ToyMlpEmbedder,
    cosine_distance,
)
from .evaluation import (
    DeletionCurve,
    MprtReport,
    average_sensitivity,
    curve_auc,
    incremental_deletion,
    mprt,
    seed_convergence,
    spearman_rho,
)
from .exceptions import (
    BackendError,
    CapabilityError,
    ConfigurationError,
    DegenerateInputError,
    DexpError,
    DomainError,
    FormatError,
    ShapeError,
)
from .explainer import (
    AttributionMap,
    DistanceExplainer,
    ExplainerConfig,
    explain_distance,
)
from .io import load_attribution, load_image, render_heatmap, save_attribution
from .masking import MaskConfig, MaskStack, apply_mask, enumerate_masks, generate_mask_stack

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "BackendError",
    "BridgeEmbedder",
    "CapabilityError",
    "ConfigurationError",
    "DegenerateInputError",
    "DeletionCurve",
    "DexpError",
    "DistanceExplainer",
    "DomainError",
    "EmbedderDescriptor",
    "ExplainerConfig",
    "FormatError",
    "MaskConfig",
    "MaskStack",
    "MprtReport",
    "PatchMeanEmbedder",
    "ShapeError",
    "ToyMlpEmbedder",
    "apply_mask",
    "average_sensitivity",
    "cosine_distance",
    "curve_auc",
    "enumerate_masks",
    "explain_distance",
    "generate_mask_stack",
    "incremental_deletion",
    "load_attribution",
    "load_image",
    "mprt",
    "render_heatmap",
    "save_attribution",
    "seed_convergence",
    "spearman_rho",
    "__version__",
]
