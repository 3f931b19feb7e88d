"""Random occlusion mask generation and application.

Masks are produced in three steps:
    1. Sample a low-resolution binary grid where each cell is kept
       (set to 1) with probability ``p_keep``.
    2. Upsample the grid with bilinear interpolation to a canvas one
       cell larger than the target image.
    3. Crop the canvas to the image size at a random integer offset,
       so mask boundaries are not aligned with a fixed grid.

Every mask is a pure function of ``(seed, mask_index)``: each index gets
its own counter-derived random substream, so stacks are bit-identical
regardless of generation order or partitioning.
"""

from dataclasses import dataclass

import cv2
import numpy as np

from .exceptions import ConfigurationError, ShapeError
from .validation import as_baseline, as_image


@dataclass(frozen=True)
class MaskConfig:
    """Hyperparameters of the mask generator.

    Attributes:
        n_masks: Number of masks to draw.
        p_keep: Probability that a low-resolution cell is kept unmasked.
        feature_res: (height, width) of the low-resolution grid.
        seed: Master seed; combined with the mask index per mask.
    """

    n_masks: int = 1000
    p_keep: float = 0.5
    feature_res: tuple[int, int] = (8, 8)
    seed: int = 0

    def __post_init__(self):
        if self.n_masks < 1:
            raise ConfigurationError(f"n_masks must be >= 1, got {self.n_masks}")
        if not 0.0 <= self.p_keep <= 1.0:
            raise ConfigurationError(f"p_keep must be in [0, 1], got {self.p_keep}")
        res = tuple(int(r) for r in self.feature_res)
        if len(res) != 2 or min(res) < 1:
            raise ConfigurationError(
                f"feature_res must be two integers >= 1, got {self.feature_res}"
            )
        object.__setattr__(self, "feature_res", res)
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigurationError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class MaskStack:
    """N masks plus the configuration that produced them."""

    masks: np.ndarray  # (N, H, W) float32 in [0, 1]
    config: MaskConfig

    @property
    def dims(self) -> tuple[int, int]:
        return self.masks.shape[1], self.masks.shape[2]

    def __len__(self) -> int:
        return self.masks.shape[0]


def _mask_rng(seed: int, index: int) -> np.random.Generator:
    # Substream keyed by the mask index; independent of generation order.
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _check_dims(config: MaskConfig, dims: tuple[int, int]) -> None:
    height, width = dims
    if height < 1 or width < 1:
        raise ConfigurationError(f"image dims must be >= 1, got {dims}")
    if height < config.feature_res[0] or width < config.feature_res[1]:
        raise ConfigurationError(
            f"image dims {dims} smaller than feature_res {config.feature_res}"
        )


def generate_single_mask(
    config: MaskConfig, dims: tuple[int, int], index: int
) -> np.ndarray:
    """Generate mask number ``index`` of the stack described by ``config``.

    Returns an (H, W) float32 array with values in [0, 1].
    """
    _check_dims(config, dims)
    height, width = dims
    grid_h, grid_w = config.feature_res
    cell_h = -(-height // grid_h)  # ceil division
    cell_w = -(-width // grid_w)

    rng = _mask_rng(config.seed, index)
    grid = (rng.random((grid_h, grid_w)) < config.p_keep).astype(np.float32)

    # Canvas one cell larger than the image, cropped at a random offset.
    up_h, up_w = height + cell_h, width + cell_w
    canvas = cv2.resize(grid, (up_w, up_h), interpolation=cv2.INTER_LINEAR)
    off_h = int(rng.integers(0, cell_h))
    off_w = int(rng.integers(0, cell_w))
    return canvas[off_h : off_h + height, off_w : off_w + width]


def generate_mask_stack(config: MaskConfig, dims: tuple[int, int]) -> MaskStack:
    """Generate the full stack of ``config.n_masks`` masks for ``dims``."""
    _check_dims(config, dims)
    masks = np.empty((config.n_masks, *dims), dtype=np.float32)
    for i in range(config.n_masks):
        masks[i] = generate_single_mask(config, dims, i)
    return MaskStack(masks=masks, config=config)


def enumerate_masks(feature_res: tuple[int, int], dims: tuple[int, int]) -> MaskStack:
    """Exhaustively enumerate all 2**(h*w) binary grids as block masks.

    Cells are expanded to pixel blocks without interpolation or crop
    jitter, so each mask keeps or zeroes whole image regions exactly.
    Image dims must be divisible by the grid. Intended for small grids;
    guarded to h*w <= 20.
    """
    grid_h, grid_w = int(feature_res[0]), int(feature_res[1])
    n_cells = grid_h * grid_w
    if n_cells > 20:
        raise ConfigurationError(
            f"enumeration of {n_cells} cells would produce 2**{n_cells} masks"
        )
    height, width = dims
    if height % grid_h or width % grid_w:
        raise ShapeError(
            f"dims {dims} not divisible by feature_res {(grid_h, grid_w)}"
        )
    n_masks = 2**n_cells
    masks = np.empty((n_masks, height, width), dtype=np.float32)
    for i in range(n_masks):
        bits = (i >> np.arange(n_cells)) & 1
        grid = bits.reshape(grid_h, grid_w).astype(np.float32)
        masks[i] = np.repeat(
            np.repeat(grid, height // grid_h, axis=0), width // grid_w, axis=1
        )
    config = MaskConfig(n_masks=n_masks, p_keep=0.5, feature_res=(grid_h, grid_w))
    return MaskStack(masks=masks, config=config)


def apply_mask(image, mask: np.ndarray, baseline=0.0) -> np.ndarray:
    """Blend an image toward a per-channel baseline where the mask is low.

    Pointwise ``baseline + mask * (image - baseline)``, i.e. pixels under
    mask value 1 are untouched and pixels under 0 are replaced.
    """
    img = as_image(image)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != img.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    base = as_baseline(baseline, img.shape[2])
    return base + mask[:, :, None] * (img - base)
