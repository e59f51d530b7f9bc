import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_num_threads(1)

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    from flashsplit.scene import generate_scene

    return generate_scene(7)


MINI_SCENE = dict(size=32)


@pytest.fixture(scope="session")
def mini_corpus():
    from flashsplit.scene import SceneConfig
    from flashsplit.trainer import SceneCorpus

    return SceneCorpus(list(range(20)), SceneConfig(**MINI_SCENE))


@pytest.fixture(scope="session")
def mini_codec(mini_corpus):
    from flashsplit.codec import CodecConfig, CodecTrainConfig
    from flashsplit.trainer import TrainConfig, train_codec_stage

    cfg = TrainConfig(stage="codec", steps=60, batch=4, crop=32)
    codec, _ = train_codec_stage(mini_corpus, cfg, CodecConfig(latent_channels=4, widths=(8, 16, 16)),
                                 CodecTrainConfig(steps=60, batch=4, log_every=0, stats_images=32))
    return codec


def pytest_terminal_summary(terminalreporter):
    from _support import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(REPORT):
            terminalreporter.write_line(line)
