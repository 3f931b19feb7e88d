"""Distance attribution core: mask, embed, rank, filter, aggregate.

Given a to-be-explained image and a reference embedding, every mask is
applied to the image, the masked image is embedded, and its cosine
distance to the reference is recorded. Masks are then ranked by distance
and a fraction is selected from one or both ends of the ranking; the
selected masks are averaged into a signed attribution map.

Sign convention: positive values mark regions whose presence pulls the
pair closer together, negative values mark regions that push it apart.
All selection modes share this convention.
"""

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .embedders import CONCURRENT_SAFE, cosine_distance
from .exceptions import ConfigurationError, DegenerateInputError
from .masking import MaskConfig, MaskStack, apply_mask, generate_mask_stack
from .validation import as_image, as_vector

logger = logging.getLogger(__name__)

SELECTION_MODES = ("top", "bottom", "mirror")


@dataclass(frozen=True)
class ExplainerConfig:
    """All hyperparameters of one explanation run."""

    mask_config: MaskConfig = field(default_factory=MaskConfig)
    selection_mode: str = "mirror"
    selection_fraction: float = 0.10
    baseline: float = 0.0

    def __post_init__(self):
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigurationError(
                f"selection_mode must be one of {SELECTION_MODES}, "
                f"got {self.selection_mode!r}"
            )
        if not 0.0 < self.selection_fraction <= 0.5:
            raise ConfigurationError(
                f"selection_fraction must be in (0, 0.5], got {self.selection_fraction}"
            )


@dataclass(frozen=True)
class DistanceRecord:
    """Distance of one masked image to the reference."""

    mask_index: int
    distance: float
    discarded: bool = False


@dataclass(frozen=True)
class AttributionMap:
    """Signed per-pixel attribution plus the settings that produced it."""

    values: np.ndarray  # (H, W) float64
    provenance: dict


def rank_and_select(records, mode: str, fraction: float):
    """Split ranked records into the low- and high-distance selections.

    Non-discarded records are sorted ascending by distance with ties
    broken by ascending mask index. Each selection holds
    ``max(1, floor(fraction * n))`` records; ``low_set`` are the smallest
    distances, ``high_set`` the largest. Modes: ``bottom`` populates only
    low_set, ``top`` only high_set, ``mirror`` both. Returns the two sets
    as lists of mask indices in rank order.
    """
    if mode not in SELECTION_MODES:
        raise ConfigurationError(f"unknown selection mode {mode!r}")
    if not 0.0 < fraction <= 0.5:
        raise ConfigurationError(f"fraction must be in (0, 0.5], got {fraction}")
    survivors = [r for r in records if not r.discarded]
    if not survivors:
        raise DegenerateInputError("no usable masks: every record was discarded")
    survivors.sort(key=lambda r: (r.distance, r.mask_index))
    count = max(1, math.floor(fraction * len(survivors)))
    low_set = [r.mask_index for r in survivors[:count]]
    high_set = [r.mask_index for r in survivors[-count:]]
    if mode == "top":
        low_set = []
    elif mode == "bottom":
        high_set = []
    return low_set, high_set


def aggregate_masks(stack: MaskStack, low_set, high_set, mode: str) -> np.ndarray:
    """Average the selected masks into a signed map, no distance weights.

    mirror: mean(low) - mean(high); bottom: +mean(low); top: -mean(high).
    The high-distance side enters negated so every mode shares the
    positive-means-closer sign convention.
    """
    need_low = mode in ("bottom", "mirror")
    need_high = mode in ("top", "mirror")
    if need_low and not low_set:
        raise DegenerateInputError(f"mode {mode!r} requires a non-empty low_set")
    if need_high and not high_set:
        raise DegenerateInputError(f"mode {mode!r} requires a non-empty high_set")
    n_masks = len(stack)
    for idx in list(low_set) + list(high_set):
        if not 0 <= idx < n_masks:
            raise DegenerateInputError(f"mask index {idx} outside stack of {n_masks}")

    height, width = stack.dims
    result = np.zeros((height, width), dtype=np.float64)
    if need_low:
        result += np.mean(stack.masks[list(low_set)], axis=0, dtype=np.float64)
    if need_high:
        result -= np.mean(stack.masks[list(high_set)], axis=0, dtype=np.float64)
    return result


def _embed_norm(embedder, masked) -> tuple[np.ndarray, float]:
    vec = as_vector(embedder.embed(masked))
    return vec, float(np.linalg.norm(vec))


def compute_distances(
    image, reference, embedder, stack: MaskStack, baseline=0.0, n_jobs: int = 1
):
    """Embed every masked image and record its distance to the reference.

    Masks whose embedding has zero norm are marked discarded (the cosine
    distance is undefined there) and excluded from ranking later.
    Results are keyed by mask index, so evaluation order does not matter.
    """
    img = as_image(image)
    ref = as_vector(reference)
    if float(np.linalg.norm(ref)) == 0.0:
        raise DegenerateInputError("reference embedding has zero norm")

    def one(index: int) -> DistanceRecord:
        masked = apply_mask(img, stack.masks[index], baseline)
        vec, norm = _embed_norm(embedder, masked)
        if norm == 0.0:
            return DistanceRecord(mask_index=index, distance=math.nan, discarded=True)
        return DistanceRecord(mask_index=index, distance=cosine_distance(vec, ref))

    indices = range(len(stack))
    parallel_ok = getattr(embedder, "concurrency", CONCURRENT_SAFE) == CONCURRENT_SAFE
    if n_jobs > 1 and parallel_ok:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(one, indices))
    else:
        records = [one(i) for i in indices]

    n_discarded = sum(r.discarded for r in records)
    if n_discarded:
        logger.info("discarded %d/%d masks with zero-norm embeddings",
                    n_discarded, len(records))
    return records


def _reference_id(reference: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(reference).tobytes()).hexdigest()[:16]


def build_provenance(config: ExplainerConfig, dims, embedder_name: str,
                     reference: np.ndarray) -> dict:
    """Canonical echo of every hyperparameter affecting the result."""
    mc = config.mask_config
    return {
        "n_masks": str(mc.n_masks),
        "p_keep": repr(mc.p_keep),
        "feature_res": f"{mc.feature_res[0]}x{mc.feature_res[1]}",
        "seed": str(mc.seed),
        "selection_mode": config.selection_mode,
        "selection_fraction": repr(config.selection_fraction),
        "baseline": repr(config.baseline),
        "dims": f"{dims[0]}x{dims[1]}",
        "embedder": embedder_name,
        "reference_id": _reference_id(as_vector(reference)),
    }


def explain_distance(image, reference, embedder, config: ExplainerConfig,
                     masks: MaskStack | None = None, n_jobs: int = 1):
    """Produce the attribution map for one (image, reference) pair.

    Runs the full pipeline: generate masks (or use the supplied stack),
    embed each masked image, compute distances to the reference, rank,
    select per ``config`` and aggregate. Deterministic given the config.
    Returns ``(AttributionMap, list[DistanceRecord])``.
    """
    img = as_image(image)
    dims = img.shape[:2]
    stack = masks if masks is not None else generate_mask_stack(config.mask_config, dims)
    if stack.dims != dims:
        raise ConfigurationError(f"mask dims {stack.dims} do not match image {dims}")
    records = compute_distances(img, reference, embedder, stack,
                                baseline=config.baseline, n_jobs=n_jobs)
    low_set, high_set = rank_and_select(
        records, config.selection_mode, config.selection_fraction
    )
    values = aggregate_masks(stack, low_set, high_set, config.selection_mode)
    name = getattr(embedder, "describe", lambda: None)()
    provenance = build_provenance(
        config, dims, name.name if name else type(embedder).__name__, reference
    )
    return AttributionMap(values=values, provenance=provenance), records


class DistanceExplainer(BaseEstimator):
    """Estimator-style front end for distance attribution.

    Hyperparameters mirror ExplainerConfig; ``fit`` binds the reference
    (a raw embedding vector, or an item that the embedder can encode) and
    ``explain``/``transform`` attribute images against it.

    >>> expl = DistanceExplainer(embedder=PatchMeanEmbedder((2, 2)))
    >>> expl.fit(reference_image).explain(image).values.shape
    (64, 64)
    """

    def __init__(self, embedder=None, n_masks=1000, p_keep=0.5,
                 feature_res=(8, 8), selection_mode="mirror",
                 selection_fraction=0.10, baseline=0.0, seed=0, n_jobs=1):
        self.embedder = embedder
        self.n_masks = n_masks
        self.p_keep = p_keep
        self.feature_res = feature_res
        self.selection_mode = selection_mode
        self.selection_fraction = selection_fraction
        self.baseline = baseline
        self.seed = seed
        self.n_jobs = n_jobs

    def make_config(self) -> ExplainerConfig:
        return ExplainerConfig(
            mask_config=MaskConfig(
                n_masks=self.n_masks,
                p_keep=self.p_keep,
                feature_res=tuple(self.feature_res),
                seed=self.seed,
            ),
            selection_mode=self.selection_mode,
            selection_fraction=self.selection_fraction,
            baseline=self.baseline,
        )

    def fit(self, reference, y=None):
        """Bind the reference side of the distance.

        A 1-D array is taken as a pre-encoded embedding (so references of
        any modality are supported); anything else is embedded.
        """
        arr = np.asarray(reference, dtype=np.float64)
        if arr.ndim == 1:
            self.reference_embedding_ = as_vector(arr)
        else:
            if self.embedder is None:
                raise ConfigurationError(
                    "an embedder is required to encode a non-vector reference"
                )
            self.reference_embedding_ = as_vector(self.embedder.embed(arr))
        return self

    def _check_fitted(self):
        if not hasattr(self, "reference_embedding_"):
            raise NotFittedError(
                "this DistanceExplainer is not fitted yet; call fit(reference) first"
            )

    def explain(self, image, masks: MaskStack | None = None) -> AttributionMap:
        """Attribute one image; distance records land in ``distance_records_``."""
        self._check_fitted()
        amap, records = explain_distance(
            image, self.reference_embedding_, self.embedder,
            self.make_config(), masks=masks, n_jobs=self.n_jobs,
        )
        self.distance_records_ = records
        return amap

    def transform(self, X) -> np.ndarray:
        """Attribute a sequence of images; returns (N, H, W) map values."""
        self._check_fitted()
        return np.stack([self.explain(img).values for img in X])
