import numpy as np
import pytest

from linecounter.model import ModelConfig
from linecounter.pgm import writeImage, writeLineMap, writeManifest
from linecounter.synth import SynthSpec, synthPage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Two encoder stages on 32x32 pages; small enough for per-test training."""
    return ModelConfig(encoder_channels=(2, 4), counter_hidden=4, input_size=(32, 32))


@pytest.fixture
def tiny_spec():
    return SynthSpec(
        page_size=(32, 32),
        line_count=(1, 3),
        glyph_height=(3, 5),
        line_gap=(1, 3),
        skew_degrees=(-2.0, 2.0),
        curvature=(0.0, 0.5),
        margin=2,
    )


@pytest.fixture
def tiny_pairs(tiny_spec):
    return [synthPage(tiny_spec, seed) for seed in range(8)]


@pytest.fixture
def tiny_manifest(tmp_path, tiny_pairs):
    """Writes tiny_pairs as PGM files plus manifest.json; returns the manifest path."""
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    entries = []
    for i, (image, linemap) in enumerate(tiny_pairs):
        writeImage(data_dir / f"page_{i}.pgm", image)
        writeLineMap(data_dir / f"page_{i}_gt.pgm", linemap)
        entries.append({"image_path": f"page_{i}.pgm", "linemap_path": f"page_{i}_gt.pgm"})
    manifest = data_dir / "manifest.json"
    writeManifest(manifest, entries)
    return str(manifest)
