import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent / "src"))

from feature_store import SyntheticConfig, generate_synthetic_features  # noqa: E402
from game_sampler import make_split  # noqa: E402
from numerics import RngStream  # noqa: E402

SMALL_SYNTHETIC = SyntheticConfig(n_classes=2, concepts_per_class=3, images_per_concept=6, d=8)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("LEWISGAME_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="long training run; set LEWISGAME_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_store():
    """2 classes x 3 concepts x 6 images, d=8"""
    return generate_synthetic_features(SMALL_SYNTHETIC, RngStream.named(0, "data"))


@pytest.fixture
def small_split(small_store):
    # 6 images per concept: 2 test, 2 validation, 2 train
    return make_split(small_store, RngStream.named(0, "data"), test_per_concept=2, validation_per_concept=2)
