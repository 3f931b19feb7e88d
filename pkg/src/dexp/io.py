"""Attribution serialization, heatmap rendering, and image loading.

The on-disk attribution format (magic ``DXA1``) is a fixed little-endian
header, a row-major float32 payload, and a trailing UTF-8 block echoing
the run configuration as flat ``key: value`` lines:

    bytes 0..3    magic "DXA1"
    bytes 4..5    format version, u16
    bytes 6..9    height, u32
    bytes 10..13  width, u32
    bytes 14..    height*width little-endian float32 values, row-major
    rest          UTF-8 metadata block
"""

import struct

import cv2
import numpy as np
from PIL import Image as PilImage

from .exceptions import FormatError, ShapeError
from .explainer import AttributionMap
from .validation import as_image

MAGIC = b"DXA1"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


def format_kv_block(data: dict) -> str:
    return "".join(f"{key}: {value}\n" for key, value in data.items())


def parse_kv_block(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, value = line.partition(":")
        out[key.strip()] = value.strip()
    return out


def save_attribution(amap: AttributionMap, path) -> None:
    """Write a map to ``path``; values are stored as 32-bit floats."""
    values = np.asarray(amap.values)
    if values.ndim != 2:
        raise ShapeError(f"attribution values must be 2-D, got shape {values.shape}")
    height, width = values.shape
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    meta = format_kv_block(amap.provenance or {})
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, height, width))
        fh.write(payload)
        fh.write(meta.encode("utf-8"))


def load_attribution(path) -> AttributionMap:
    """Read a map written by :func:`save_attribution`.

    The float32 payload is returned upcast to float64 (exact), so
    save/load round-trips are identities on values and dims.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(blob)}"
        )
    magic, version, height, width = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic at offset 0: expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version} at offset 4")
    if height < 1 or width < 1:
        raise FormatError(f"invalid dims {height}x{width} at offset 6")
    n_bytes = 4 * height * width
    start, end = _HEADER.size, _HEADER.size + n_bytes
    if len(blob) < end:
        raise FormatError(
            f"truncated payload at offset {start}: "
            f"expected {n_bytes} bytes, got {len(blob) - start}"
        )
    values = np.frombuffer(blob[start:end], dtype="<f4").reshape(height, width)
    try:
        meta = parse_kv_block(blob[end:].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError(f"metadata block at offset {end} is not UTF-8: {exc}") from exc
    return AttributionMap(values=values.astype(np.float64), provenance=meta)


def render_heatmap(amap, base_image, out_path, alpha: float = 0.55,
                   value_range=(0.0, 255.0)) -> None:
    """Overlay a diverging red/blue heatmap on the grayscale base image.

    Positive values tint red, negative blue, scaled symmetrically about
    zero by max(|map|). A zero map renders as a flat neutral overlay.
    """
    values = amap.values if isinstance(amap, AttributionMap) else np.asarray(amap)
    base = as_image(base_image)
    if values.shape != base.shape[:2]:
        raise ShapeError(
            f"map shape {values.shape} does not match image {base.shape[:2]}"
        )
    lo, hi = value_range
    gray = np.clip((base.mean(axis=2) - lo) / (hi - lo), 0.0, 1.0) * 255.0

    vmax = float(np.max(np.abs(values)))
    t = np.abs(values) / vmax if vmax > 0 else np.zeros_like(values)
    color = np.empty((*values.shape, 3))
    positive = values >= 0
    # white fades to pure red for positive, pure blue for negative
    color[..., 0] = np.where(positive, 1.0, 1.0 - t)
    color[..., 1] = 1.0 - t
    color[..., 2] = np.where(positive, 1.0 - t, 1.0)

    blended = (1.0 - alpha) * gray[:, :, None] + alpha * color * 255.0
    raster = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    PilImage.fromarray(raster, mode="RGB").save(out_path)


def load_image(path, grayscale: bool = False, resize=None) -> np.ndarray:
    """Load a raster image as float64 HxWxC in the 0..255 range.

    ``resize`` is an (height, width) target, interpolated bilinearly.
    """
    with PilImage.open(path) as img:
        img = img.convert("L" if grayscale else "RGB")
        pixels = np.asarray(img, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if resize is not None:
        height, width = int(resize[0]), int(resize[1])
        pixels = cv2.resize(pixels, (width, height), interpolation=cv2.INTER_LINEAR)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
    return pixels
