import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Small desk corpus: smooth synthetic grayscale images as PGM."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(7)
    for i in range(8):
        h, w = 72, 88
        yy, xx = np.mgrid[0:h, 0:w]
        img = 0.5 + 0.25 * np.sin(2 * np.pi * (xx / w * (i % 3 + 1)))
        img += 0.2 * np.cos(2 * np.pi * yy / h * (i % 4 + 1))
        img += 0.05 * rng.standard_normal((h, w))
        img = np.clip(img, 0.0, 1.0)
        Image.fromarray((img * 255).round().astype(np.uint8), mode="L").save(
            root / f"clean_{i}.pgm"
        )
    return root
