"""Embedding backends and the distance metric.

Two deterministic built-in embedders are provided: a per-patch channel
mean (interpretable, used as the test oracle backend) and a seeded toy
MLP (layered, so the model-randomization protocol can run against it).
Out-of-process backends live in :mod:`dexp.bridge` and fulfil the same
contract.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import CapabilityError, ConfigurationError, DomainError, ShapeError
from .validation import as_image, as_vector

CONCURRENT_SAFE = "concurrent-safe"
SERIALIZED = "serialized"


@dataclass(frozen=True)
class EmbedderDescriptor:
    """Capabilities of an embedding backend."""

    name: str
    output_dim: int
    supports_randomization: bool = False
    layer_count: int = 0


def cosine_distance(a, b) -> float:
    """1 minus the cosine of the angle between two vectors. Range [0, 2].

    Raises DomainError on zero-norm input, which signals a degenerate
    embedding (e.g. a fully masked image through a rectifier net).
    """
    va, vb = as_vector(a), as_vector(b)
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DomainError("cosine distance is undefined for zero-norm vectors")
    d = 1.0 - float(np.dot(va, vb)) / (norm_a * norm_b)
    # guard against last-ulp excursions outside the mathematical range
    return min(max(d, 0.0), 2.0)


class PatchMeanEmbedder(BaseEstimator):
    """Embed an image as its per-patch channel means.

    The image is divided into a grid of (grid_h, grid_w) equal patches;
    the output vector holds the mean of each patch per channel, row-major
    over patches. Fully interpretable, which makes planted-feature test
    cases exactly computable.
    """

    concurrency = CONCURRENT_SAFE

    def __init__(self, grid=(2, 2)):
        self.grid = grid

    def embed(self, image) -> np.ndarray:
        return patch_mean_embed(image, self.grid)

    def describe(self) -> EmbedderDescriptor:
        gh, gw = self.grid
        # output_dim depends on the channel count; advertised for C=1
        return EmbedderDescriptor(
            name=f"patch-mean:{gh}x{gw}", output_dim=gh * gw
        )


def patch_mean_embed(image, grid: tuple[int, int]) -> np.ndarray:
    """Per-patch channel means, row-major over a (gh, gw) patch grid."""
    img = as_image(image)
    gh, gw = int(grid[0]), int(grid[1])
    if gh < 1 or gw < 1:
        raise ConfigurationError(f"grid must be >= 1x1, got {grid}")
    height, width, _ = img.shape
    if height % gh or width % gw:
        raise ShapeError(f"image dims {(height, width)} not divisible by grid {grid}")
    blocks = img.reshape(gh, height // gh, gw, width // gw, img.shape[2])
    return blocks.mean(axis=(1, 3), dtype=np.float64).ravel()


@dataclass(frozen=True)
class ToyMlpParams:
    """Weights of a small fully connected net, fixed by (seed, layout).

    weights[l] has shape (out_l, in_l); hidden layers use a rectifier,
    the output layer is linear.
    """

    weights: tuple
    biases: tuple
    seed: int

    def __post_init__(self):
        for l in range(1, len(self.weights)):
            if self.weights[l].shape[1] != self.weights[l - 1].shape[0]:
                raise ConfigurationError(
                    f"layer {l} expects {self.weights[l].shape[1]} inputs, "
                    f"layer {l - 1} yields {self.weights[l - 1].shape[0]}"
                )

    @property
    def layer_count(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    bias = rng.uniform(-bound, bound, size=fan_out)
    return weight, bias


def _layer_rng(seed: int, layer: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(layer,)))


def _redraw_rng(seed: int, layer: int) -> np.random.Generator:
    # salted so a redraw never reproduces the build stream at equal seeds
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(layer, 1)))


def build_toy_mlp(input_dim: int, layer_sizes, seed: int = 0) -> ToyMlpParams:
    """Construct seeded MLP weights, uniform in +-1/sqrt(fan_in) per layer."""
    if input_dim < 1 or any(s < 1 for s in layer_sizes):
        raise ConfigurationError("all layer sizes must be >= 1")
    weights, biases = [], []
    fan_in = int(input_dim)
    for l, size in enumerate(layer_sizes):
        w, b = _init_layer(_layer_rng(seed, l), fan_in, int(size))
        weights.append(w)
        biases.append(b)
        fan_in = int(size)
    return ToyMlpParams(weights=tuple(weights), biases=tuple(biases), seed=seed)


def toy_mlp_embed(image, params: ToyMlpParams, softmax: bool = False) -> np.ndarray:
    """Forward pass: affine + rectifier on hidden layers, linear output."""
    x = as_image(image).ravel()
    if x.size != params.input_dim:
        raise ShapeError(
            f"flattened image has {x.size} values, net expects {params.input_dim}"
        )
    n_layers = params.layer_count
    for l in range(n_layers):
        x = params.weights[l] @ x + params.biases[l]
        if l < n_layers - 1:
            x = np.maximum(x, 0.0)
    if softmax:
        x = np.exp(x - np.max(x))
        x = x / np.sum(x)
    return x


def randomize_layers(
    params: ToyMlpParams, scheme: str, k: int, seed: int = 0
) -> ToyMlpParams:
    """Perturb k layers of the net, leaving the rest bit-identical.

    top_down replaces the last k layers with fresh seeded weights,
    bottom_up the first k. independent shuffles the weight entries of
    layer k alone (the k-th step of a one-layer-at-a-time progression),
    preserving the layer's weight multiset; biases are untouched.
    """
    n_layers = params.layer_count
    if not 0 <= k <= n_layers:
        raise ConfigurationError(f"k must be in [0, {n_layers}], got {k}")
    if scheme not in ("top_down", "bottom_up", "independent"):
        raise ConfigurationError(f"unknown randomization scheme {scheme!r}")
    if k == 0:
        return params

    weights = list(params.weights)
    biases = list(params.biases)
    if scheme == "independent":
        layer = k - 1
        rng = _redraw_rng(seed, layer)
        flat = weights[layer].ravel()
        weights[layer] = flat[rng.permutation(flat.size)].reshape(weights[layer].shape)
    else:
        targets = range(n_layers - k, n_layers) if scheme == "top_down" else range(k)
        for layer in targets:
            w, b = _init_layer(
                _redraw_rng(seed, layer),
                weights[layer].shape[1],
                weights[layer].shape[0],
            )
            weights[layer] = w
            biases[layer] = b
    return ToyMlpParams(weights=tuple(weights), biases=tuple(biases), seed=params.seed)


class ToyMlpEmbedder(BaseEstimator):
    """Seeded multilayer perceptron over flattened pixels.

    Weights are built lazily for the first image's flattened size and are
    fully determined by (seed, layer_sizes), or can be supplied directly
    via ``params`` (as the randomization protocol does).
    """

    concurrency = CONCURRENT_SAFE

    def __init__(self, layer_sizes=(64, 32), seed=0, softmax=False, params=None):
        self.layer_sizes = layer_sizes
        self.seed = seed
        self.softmax = softmax
        self.params = params

    def _params_for(self, input_dim: int) -> ToyMlpParams:
        if self.params is not None:
            return self.params
        if getattr(self, "_built", None) is None or self._built.input_dim != input_dim:
            self._built = build_toy_mlp(input_dim, self.layer_sizes, self.seed)
        return self._built

    def embed(self, image) -> np.ndarray:
        img = as_image(image)
        return toy_mlp_embed(img, self._params_for(img.size), self.softmax)

    def describe(self) -> EmbedderDescriptor:
        if self.params is not None:
            dim, layers = self.params.output_dim, self.params.layer_count
        else:
            dim, layers = int(self.layer_sizes[-1]), len(self.layer_sizes)
        return EmbedderDescriptor(
            name=f"toy-mlp:seed={self.seed}",
            output_dim=dim,
            supports_randomization=True,
            layer_count=layers,
        )

    def randomized(self, scheme: str, k: int, seed: int = 0) -> "ToyMlpEmbedder":
        """Return a new embedder with k layers randomized; requires that
        the weights exist (supply params or embed something first)."""
        params = self.params if self.params is not None else getattr(self, "_built", None)
        if params is None:
            raise CapabilityError("randomize requires built weights; embed once first")
        new = randomize_layers(params, scheme, k, seed)
        return ToyMlpEmbedder(
            layer_sizes=self.layer_sizes,
            seed=self.seed,
            softmax=self.softmax,
            params=new,
        )
