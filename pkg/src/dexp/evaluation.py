"""Quantitative checks for attribution quality.

Covers incremental deletion (does removing highlighted pixels move the
distance accordingly), average sensitivity (do small input perturbations
leave the map stable), layer randomization with Spearman rank
correlation (does the map actually depend on the model), and the
convergence of maps across mask seeds as the mask count grows.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from .embedders import cosine_distance
from .exceptions import (
    CapabilityError,
    ConfigurationError,
    DegenerateInputError,
    ShapeError,
)
from .explainer import AttributionMap, ExplainerConfig, explain_distance
from .masking import MaskConfig
from .validation import as_baseline, as_image, as_vector

DELETION_ORDERS = ("lodf", "hidf", "random")


@dataclass(frozen=True)
class DeletionCurve:
    """Distance change as pixels are progressively replaced by a fill."""

    fractions: np.ndarray
    delta_d: np.ndarray
    order: str
    fill_value: np.ndarray


def _map_values(amap) -> np.ndarray:
    if isinstance(amap, AttributionMap):
        return amap.values
    return np.asarray(amap, dtype=np.float64)


def _deletion_order(values: np.ndarray, order: str, seed: int) -> np.ndarray:
    flat = values.ravel()
    if order == "lodf":
        # most distance-decreasing first; ties fall back to pixel index
        return np.argsort(-flat, kind="stable")
    if order == "hidf":
        return np.argsort(flat, kind="stable")
    if order == "random":
        return np.random.default_rng(seed).permutation(flat.size)
    raise ConfigurationError(f"order must be one of {DELETION_ORDERS}, got {order!r}")


def incremental_deletion(image, attribution, embedder, reference,
                         order: str = "lodf", step_fraction: float = 0.02,
                         fill=None, seed: int = 0,
                         value_range=(0.0, 255.0)) -> DeletionCurve:
    """Delete pixels in attribution order and track the distance change.

    Pixels are sorted by attribution (lodf: descending, hidf: ascending,
    random: seeded shuffle) and replaced by ``fill`` in cumulative steps
    of ``step_fraction``; after each step the image is re-embedded and
    ``delta_d = d(deleted, ref) - d(original, ref)`` is recorded. The
    fill defaults to the middle of the value range.
    """
    img = as_image(image)
    values = _map_values(attribution)
    if values.shape != img.shape[:2]:
        raise ShapeError(
            f"attribution shape {values.shape} does not match image {img.shape[:2]}"
        )
    if not 0.0 < step_fraction <= 1.0:
        raise ConfigurationError(f"step_fraction must be in (0, 1], got {step_fraction}")
    order = order.lower()
    ranking = _deletion_order(values, order, seed)

    if fill is None:
        fill = 0.5 * (value_range[0] + value_range[1])
    fill_vec = as_baseline(fill, img.shape[2])

    n_pixels = values.size
    fractions = [0.0]
    while fractions[-1] < 1.0:
        fractions.append(min(fractions[-1] + step_fraction, 1.0))
    fractions = np.array(fractions)

    d_original = cosine_distance(embedder.embed(img), as_vector(reference))
    flat_pixels = img.reshape(n_pixels, img.shape[2])
    delta_d = np.zeros(len(fractions))
    for step, frac in enumerate(fractions[1:], start=1):
        n_delete = int(round(frac * n_pixels))
        deleted = flat_pixels.copy()
        deleted[ranking[:n_delete]] = fill_vec
        d_now = cosine_distance(embedder.embed(deleted.reshape(img.shape)), reference)
        delta_d[step] = d_now - d_original
    return DeletionCurve(fractions=fractions, delta_d=delta_d, order=order,
                         fill_value=fill_vec)


def curve_auc(curve: DeletionCurve) -> float:
    """Trapezoidal area under delta_d over the deleted fraction."""
    if len(curve.fractions) < 2:
        raise ConfigurationError("a curve needs at least two points")
    return float(trapezoid(curve.delta_d, curve.fractions))


def average_sensitivity(explain_fn, image, n_samples: int = 20,
                        perturb_std: float = 25.5, seed: int = 0,
                        value_range=(0.0, 255.0)) -> float:
    """Mean relative map change under Gaussian input perturbations.

    ``mean_s ||explain(clip(x + noise_s)) - explain(x)||_F / ||explain(x)||_F``
    with elementwise noise of the given standard deviation. The explain
    function must hold its masks fixed (a fixed mask seed) so the map
    difference reflects only the input perturbation.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    img = as_image(image)
    base = _map_values(explain_fn(img))
    base_norm = float(np.linalg.norm(base))
    if base_norm == 0.0:
        raise DegenerateInputError("base attribution map has zero norm")

    rng = np.random.default_rng(seed)
    lo, hi = value_range
    total = 0.0
    for _ in range(n_samples):
        noise = rng.normal(0.0, perturb_std, size=img.shape)
        perturbed = np.clip(img + noise, lo, hi)
        sample = _map_values(explain_fn(perturbed))
        total += float(np.linalg.norm(sample - base)) / base_norm
    return total / n_samples


def spearman_rho(a, b) -> float:
    """Pearson correlation of average-tied ranks; in [-1, 1]."""
    xa = np.asarray(a, dtype=np.float64).ravel()
    xb = np.asarray(b, dtype=np.float64).ravel()
    if xa.size != xb.size:
        raise ShapeError(f"length mismatch: {xa.size} vs {xb.size}")
    if xa.size < 2:
        raise ConfigurationError("need at least two values per input")
    if np.all(xa == xa[0]) or np.all(xb == xb[0]):
        raise DegenerateInputError("ranks are degenerate for constant input")
    ra = rankdata(xa)
    rb = rankdata(xb)
    if np.array_equal(ra, rb):
        # corrcoef rounds to 0.999... on identical ranks; equality is exact
        return 1.0
    rho = float(np.corrcoef(ra, rb)[0, 1])
    return min(max(rho, -1.0), 1.0)


@dataclass(frozen=True)
class MprtEntry:
    layer: int
    scheme: str
    rho: float
    attribution: AttributionMap


@dataclass(frozen=True)
class MprtReport:
    """Per-layer rank correlations against the unperturbed map."""

    scheme: str
    base: AttributionMap
    entries: tuple


def mprt(image, reference_item, embedder, scheme: str,
         config: ExplainerConfig, seed: int = 0, n_jobs: int = 1) -> MprtReport:
    """Randomize model layers progressively and re-explain after each step.

    For k = 1..L the embedder's layers are perturbed per ``scheme``
    (top_down and bottom_up accumulate fresh weights from either end,
    independent shuffles layer k alone), the reference item is re-embedded
    by the perturbed model, and the new map's Spearman correlation against
    the unperturbed map is recorded along with the map itself.
    """
    descriptor = embedder.describe()
    if not descriptor.supports_randomization:
        raise CapabilityError(
            f"embedder {descriptor.name!r} does not support layer randomization"
        )
    base_ref = embedder.embed(reference_item)
    base_map, _ = explain_distance(image, base_ref, embedder, config, n_jobs=n_jobs)

    entries = []
    for k in range(1, descriptor.layer_count + 1):
        perturbed = embedder.randomized(scheme, k, seed)
        ref_k = perturbed.embed(reference_item)
        map_k, _ = explain_distance(image, ref_k, perturbed, config, n_jobs=n_jobs)
        rho = spearman_rho(base_map.values, map_k.values)
        entries.append(MprtEntry(layer=k, scheme=scheme, rho=rho, attribution=map_k))
    return MprtReport(scheme=scheme, base=base_map, entries=tuple(entries))


def seed_convergence(image, reference, embedder, config: ExplainerConfig,
                     seeds, mask_counts, n_jobs: int = 1):
    """Mean per-pixel std of maps across seeds, per mask count.

    For each mask count the explanation is re-run once per seed; the
    per-pixel standard deviation across those maps is averaged over
    pixels. Returns ``[(mask_count, mean_std), ...]`` in input order.
    """
    seeds = list(seeds)
    mask_counts = list(mask_counts)
    if len(seeds) < 2:
        raise ConfigurationError("need at least two seeds")
    if len(mask_counts) < 2:
        raise ConfigurationError("need at least two mask counts")

    rows = []
    for count in mask_counts:
        maps = []
        for seed in seeds:
            mc = MaskConfig(
                n_masks=int(count),
                p_keep=config.mask_config.p_keep,
                feature_res=config.mask_config.feature_res,
                seed=int(seed),
            )
            run_config = ExplainerConfig(
                mask_config=mc,
                selection_mode=config.selection_mode,
                selection_fraction=config.selection_fraction,
                baseline=config.baseline,
            )
            amap, _ = explain_distance(image, reference, embedder, run_config,
                                       n_jobs=n_jobs)
            maps.append(amap.values)
        per_pixel_std = np.std(np.stack(maps), axis=0)
        rows.append((int(count), float(per_pixel_std.mean())))
    return rows
