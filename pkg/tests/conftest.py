import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_RUN = dict(d_v=4, d_u=4, d_s=2, heads=2, ffn_dim=16, ospu_heads=2, ospu_ffn=16, ospu_cls_hidden=8,
                lr=1e-3, epochs=3)
TINY_DATA = dict(n_videos=6, n_frames=4, feat_dim=8, max_objects=4)


@pytest.fixture
def tiny_corpus():
    from tempura.data import GeneratorConfig, generate

    cfg = GeneratorConfig(**TINY_DATA)
    return cfg, generate(cfg)


def tiny_run(**kw):
    from tempura.config import RunConfig

    return RunConfig(**{**TINY_RUN, **kw})


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
