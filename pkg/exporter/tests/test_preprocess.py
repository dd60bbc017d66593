"""Crop strategy geometry tests."""

import numpy as np
import pytest
from PIL import Image

from cnnexport.preprocess import IMAGENET_MEAN, crop_geometry, crop_image


def solid(width, height, color=(200, 30, 90)):
    return Image.new("RGB", (width, height), color)


class TestCenter:
    def test_landscape_example(self):
        geometry = crop_geometry(448, 336, 224, "center")
        assert geometry.resized == (299, 224)
        assert geometry.crop_box == (37, 0, 261, 224)

    def test_portrait(self):
        geometry = crop_geometry(336, 448, 224, "center")
        assert geometry.resized == (224, 299)
        assert geometry.crop_box == (0, 37, 224, 261)

    def test_output_shape(self):
        tensor = crop_image(solid(448, 336), 224, "center")
        assert tensor.shape == (3, 224, 224)


class TestPadding:
    def test_landscape_example(self):
        geometry = crop_geometry(448, 336, 224, "padding")
        assert geometry.resized == (224, 168)
        assert geometry.pad_offset == (0, 28)  # 56 rows split 28/28

    def test_odd_split_goes_bottom_right(self):
        geometry = crop_geometry(448, 337, 224, "padding")
        new_h = geometry.resized[1]
        top = geometry.pad_offset[1]
        bottom = 224 - new_h - top
        assert bottom >= top

    def test_fill_value_is_mean(self):
        tensor = crop_image(solid(448, 336), 224, "padding")
        # After mean subtraction the padded rows are exactly zero.
        assert np.abs(tensor[:, :28, :]).max() == 0.0
        assert np.abs(tensor[:, -28:, :]).max() == 0.0
        assert np.abs(tensor[:, 112, 112]).max() > 0.0

    def test_custom_mean(self):
        mean = (0.5, 0.5, 0.5)
        tensor = crop_image(solid(448, 336), 224, "padding", mean=mean)
        assert np.abs(tensor[:, 0, 0]).max() == 0.0


class TestSquish:
    def test_geometry_ignores_aspect(self):
        geometry = crop_geometry(448, 336, 224, "squish")
        assert geometry.resized == (224, 224)
        assert geometry.crop_box is None and geometry.pad_offset is None

    def test_square_input_center_equals_squish(self):
        img = solid(300, 300)
        center = crop_image(img, 224, "center")
        squish = crop_image(img, 224, "squish")
        assert np.array_equal(center, squish)


class TestValidation:
    def test_degenerate_image_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            crop_geometry(0, 100, 224, "center")

    def test_unknown_strategy(self):
        with pytest.raises(ValueError, match="unknown crop"):
            crop_geometry(100, 100, 224, "mosaic")

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 255, size=(90, 130, 3), dtype=np.uint8)
        img = Image.fromarray(arr)
        a = crop_image(img, 224, "center")
        b = crop_image(img, 224, "center")
        assert np.array_equal(a, b)
