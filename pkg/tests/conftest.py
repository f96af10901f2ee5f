import numpy as np
import pytest

from sdtgan.data import CorpusConfig
from sdtgan.models import ModelConfig
from sdtgan.train import TrainConfig


def small_model(**kw) -> ModelConfig:
    """16x16 geometry: same three-stage layout, a fraction of the cost."""
    base = dict(F=16, T=16, c_c=16, c_z=8, g_stem_channels=8, g_channels=(8, 8, 8),
                d_channels=(8, 8, 8), c_g=16, c_embed=16)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def small_corpus():
    return CorpusConfig.build(vocab_size=8, F=16, T=16, seed=0)


@pytest.fixture
def small_train_cfg(tmp_path):
    def make(**kw):
        base = dict(batch_size=4, total_g_steps=3, checkpoint_interval=2, n_probes=8,
                    model=small_model(), checkpoint_dir=str(tmp_path / "ckpt"),
                    log_path=str(tmp_path / "log.jsonl"), metrics_path=str(tmp_path / "metrics.jsonl"))
        base.update(kw)
        return TrainConfig(**base)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
