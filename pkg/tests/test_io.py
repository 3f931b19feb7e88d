import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image as PilImage

from dexp.exceptions import FormatError, ShapeError
from dexp.explainer import AttributionMap
from dexp.io import (
    format_kv_block,
    load_attribution,
    load_image,
    parse_kv_block,
    render_heatmap,
    save_attribution,
)

finite_f32 = st.floats(
    min_value=-65536.0, max_value=65536.0, allow_nan=False, width=32
)


def amap_of(values, **meta):
    return AttributionMap(values=np.asarray(values, dtype=np.float64),
                          provenance={k: str(v) for k, v in meta.items()})


class TestKvBlock:
    def test_round_trip(self):
        data = {"n_masks": "1000", "mode": "mirror", "note": "a: b: c"}
        assert parse_kv_block(format_kv_block(data)) == data

    def test_blank_lines_ignored(self):
        assert parse_kv_block("a: 1\n\nb: 2\n") == {"a": "1", "b": "2"}


class TestDxa1:
    def test_round_trip_identity(self, tmp_path, rng):
        path = tmp_path / "map.dxa1"
        values = rng.normal(size=(7, 5))
        save_attribution(amap_of(values, seed=3), path)
        loaded = load_attribution(path)
        # float32 storage: compare against the declared precision
        np.testing.assert_array_equal(loaded.values,
                                      values.astype(np.float32).astype(np.float64))
        assert loaded.provenance == {"seed": "3"}

    def test_exact_payload_encoding(self, tmp_path):
        path = tmp_path / "one.dxa1"
        save_attribution(amap_of([[0.5]]), path)
        blob = path.read_bytes()
        assert blob[:4] == b"DXA1"
        version, height, width = struct.unpack("<HII", blob[4:14])
        assert (version, height, width) == (1, 1, 1)
        assert blob[14:18] == bytes([0x00, 0x00, 0x00, 0x3F])

    @given(
        values=hnp.arrays(
            dtype=np.float32,
            shape=st.tuples(st.integers(1, 12), st.integers(1, 12)),
            elements=finite_f32,
        )
    )
    def test_any_map_round_trips(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("dxa") / "map.dxa1"
        save_attribution(amap_of(values.astype(np.float64), a="b"), path)
        loaded = load_attribution(path)
        assert loaded.values.astype(np.float32).tobytes() == values.tobytes()
        assert loaded.values.shape == values.shape

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        path = tmp_path / "short.dxa1"
        save_attribution(amap_of(np.ones((4, 4))), path)
        whole = path.read_bytes()
        clipped = whole[: 14 + 30]  # 30 of 64 payload bytes
        path.write_bytes(clipped)
        with pytest.raises(FormatError) as err:
            load_attribution(path)
        assert "64" in str(err.value)
        assert "30" in str(err.value)

    def test_bad_magic_offsets(self, tmp_path):
        path = tmp_path / "bad.dxa1"
        save_attribution(amap_of(np.ones((2, 2))), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError) as err:
            load_attribution(path)
        assert "offset 0" in str(err.value)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v9.dxa1"
        save_attribution(amap_of(np.ones((2, 2))), path)
        blob = bytearray(path.read_bytes())
        blob[4:6] = struct.pack("<H", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError) as err:
            load_attribution(path)
        assert "offset 4" in str(err.value)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "stub.dxa1"
        path.write_bytes(b"DXA1\x01")
        with pytest.raises(FormatError) as err:
            load_attribution(path)
        assert "header" in str(err.value)

    def test_non_2d_values_rejected(self, tmp_path):
        with pytest.raises(ShapeError):
            save_attribution(amap_of(np.ones(5)), tmp_path / "x.dxa1")


class TestRenderHeatmap:
    def read(self, path):
        with PilImage.open(path) as img:
            return np.asarray(img, dtype=np.int32)

    def test_zero_map_is_uniform_neutral(self, tmp_path):
        base = np.full((6, 6, 1), 90.0)
        out = tmp_path / "flat.png"
        render_heatmap(amap_of(np.zeros((6, 6))), base, out)
        raster = self.read(out)
        assert (raster == raster[0, 0]).all()

    def test_single_positive_pixel_is_the_only_red_one(self, tmp_path):
        values = np.zeros((5, 5))
        values[2, 3] = 1.0
        base = np.full((5, 5, 1), 90.0)
        out = tmp_path / "dot.png"
        render_heatmap(amap_of(values), base, out)
        raster = self.read(out)
        reddish = (raster[:, :, 0] - raster[:, :, 2]) > 0
        assert reddish[2, 3]
        assert reddish.sum() == 1

    def test_sign_flip_swaps_red_and_blue(self, tmp_path, rng):
        values = rng.normal(size=(8, 8))
        base = rng.uniform(0, 255, size=(8, 8, 3))
        pos, neg = tmp_path / "pos.png", tmp_path / "neg.png"
        render_heatmap(amap_of(values), base, pos)
        render_heatmap(amap_of(-values), base, neg)
        a, b = self.read(pos), self.read(neg)
        mirrored = values != 0.0  # zero pixels keep red==blue either way
        np.testing.assert_array_equal(a[mirrored][:, 0], b[mirrored][:, 2])
        np.testing.assert_array_equal(a[mirrored][:, 2], b[mirrored][:, 0])
        np.testing.assert_array_equal(a[:, :, 1], b[:, :, 1])

    def test_dims_must_match(self, tmp_path):
        with pytest.raises(ShapeError):
            render_heatmap(amap_of(np.zeros((3, 3))), np.zeros((4, 4, 1)),
                           tmp_path / "x.png")


class TestLoadImage:
    def test_png_round_trip(self, tmp_path, rng):
        path = tmp_path / "img.png"
        pixels = rng.integers(0, 256, size=(9, 7, 3), dtype=np.uint8)
        PilImage.fromarray(pixels, mode="RGB").save(path)
        loaded = load_image(path)
        assert loaded.shape == (9, 7, 3)
        np.testing.assert_array_equal(loaded, pixels.astype(np.float64))

    def test_grayscale_has_one_channel(self, tmp_path):
        path = tmp_path / "gray.png"
        PilImage.fromarray(np.full((5, 5), 77, dtype=np.uint8), mode="L").save(path)
        loaded = load_image(path, grayscale=True)
        assert loaded.shape == (5, 5, 1)
        assert loaded[0, 0, 0] == 77.0

    def test_resize_is_height_then_width(self, tmp_path):
        path = tmp_path / "img.png"
        PilImage.fromarray(np.zeros((12, 8), dtype=np.uint8), mode="L").save(path)
        loaded = load_image(path, grayscale=True, resize=(6, 4))
        assert loaded.shape == (6, 4, 1)
