from __future__ import annotations

import pytest

from helpers import SYNTH_SETTINGS, TINY_PLAN
from simple2complex.backend.graph import SeriesNetwork, build_plain_network
from simple2complex.common.config import TrainConfig, build_config
from simple2complex.common.tensor import SeededRng


@pytest.fixture
def rng() -> SeededRng:
    return SeededRng(1234)


@pytest.fixture
def tiny_net(rng: SeededRng) -> SeriesNetwork:
    return build_plain_network(TINY_PLAN, classes=3, rng=rng, input_shape=(3, 8, 8), precision="double")


@pytest.fixture
def synth_config():
    """Factory for a seconds-scale synthetic run; extra ``key=value`` strings override."""

    def make(*extra: str) -> TrainConfig:
        return build_config(overrides=[*SYNTH_SETTINGS, *extra])

    return make
