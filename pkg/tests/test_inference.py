import numpy as np
import pytest
from PIL import Image

from linecounter.inference import (
    PALETTE,
    colorize,
    foregroundMask,
    lineMapFromCounts,
    predictCounts,
    predictLineMap,
    relabelComponents,
    writeVisualization,
)
from linecounter.model import build
from linecounter.resize import resizePad


class TestPredict:
    def test_blank_page_gives_blank_line_map(self, tiny_config):
        labels = predictLineMap(build(tiny_config), np.ones((50, 40), dtype=np.float32))
        assert labels.shape == (50, 40)
        np.testing.assert_array_equal(labels, 0)

    def test_counts_shape(self, tiny_config, rng):
        counts = predictCounts(build(tiny_config), rng.random((3, 32, 32)))
        assert counts.shape == (3, 32, 32)

    def test_predicted_labels_live_on_text_pixels(self, tiny_config, tiny_pairs):
        image, _ = tiny_pairs[0]
        labels = predictLineMap(build(tiny_config), image, postprocess="ccl")
        assert np.all(labels[image >= 0.5] == 0)
        assert labels.min() >= 0

    def test_oracle_counts_reproduce_ground_truth(self, tiny_pairs, rng):
        for image, linemap in tiny_pairs:
            _, _, record = resizePad(image, target=(32, 32))
            counts = linemap + rng.uniform(-0.49, 0.49, linemap.shape)
            np.testing.assert_array_equal(lineMapFromCounts(counts, image, record), linemap)

    def test_oracle_counts_on_a_padded_page(self, tiny_pairs, rng):
        image, linemap = tiny_pairs[2][0][:24], tiny_pairs[2][1][:24]
        _, padded_labels, record = resizePad(image, linemap, target=(32, 32))
        assert record.padding == (8, 0)
        counts = padded_labels + rng.uniform(-0.4, 0.4, padded_labels.shape)
        np.testing.assert_array_equal(lineMapFromCounts(counts, image, record), linemap)


class TestForeground:
    def test_fixed_threshold(self):
        image = np.array([[0.0, 0.49, 0.5, 1.0]])
        np.testing.assert_array_equal(foregroundMask(image, 0.5), [[True, True, False, False]])

    def test_otsu_separates_two_levels(self, rng):
        image = np.where(rng.random((20, 20)) < 0.3, 0.2, 0.8).astype(np.float32)
        np.testing.assert_array_equal(foregroundMask(image, method="otsu"), image < 0.5)

    def test_otsu_on_constant_page(self):
        assert not foregroundMask(np.ones((5, 5)), method="otsu").any()


class TestPostprocess:
    def test_dominant_label_takes_the_component(self):
        labels = np.zeros((3, 12), dtype=np.int32)
        labels[1, :10] = 1
        labels[1, 10:] = 2
        np.testing.assert_array_equal(relabelComponents(labels)[1], 1)

    def test_split_component_is_left_alone(self):
        labels = np.zeros((3, 10), dtype=np.int32)
        labels[1, :5] = 1
        labels[1, 5:] = 2
        np.testing.assert_array_equal(relabelComponents(labels), labels)

    def test_diagonal_pixels_are_separate_components(self):
        labels = np.array([[1, 0], [0, 2]], dtype=np.int32)
        np.testing.assert_array_equal(relabelComponents(labels), labels)


class TestVisualization:
    def test_palette_cycles_and_background_is_white(self):
        rgb = colorize(np.array([[0, 1, 12, 13]]))
        assert tuple(rgb[0, 0]) == (255, 255, 255)
        assert tuple(rgb[0, 1]) == (60, 180, 75)
        assert tuple(rgb[0, 2]) == tuple(PALETTE[0])
        assert tuple(rgb[0, 3]) == tuple(rgb[0, 1])

    def test_palette_has_twelve_distinct_colors(self):
        assert len({tuple(color) for color in PALETTE}) == 12

    def test_ppm_file(self, tmp_path):
        writeVisualization(tmp_path / "lines.ppm", np.array([[0, 1], [2, 3]]))
        assert (tmp_path / "lines.ppm").read_bytes().startswith(b"P6\n2 2\n255\n")

    def test_png_file(self, tmp_path):
        writeVisualization(tmp_path / "lines.png", np.array([[0, 1, 2]]), png=True)
        with Image.open(tmp_path / "lines.png") as png:
            assert png.size == (3, 1)
            assert png.getpixel((1, 0)) == (60, 180, 75)
