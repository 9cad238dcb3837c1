import numpy as np
import pytest

from adaptive_nmt.model import ModelConfig, init_params


def tiny_model(mode="adaptive", seed=0, scale=0.5, src_vocab=10, tgt_vocab=8, emb=6, hidden=8, **kw):
    """Small model whose parameters are redrawn from uniform(-scale, scale)."""
    cfg = ModelConfig(mode=mode, src_vocab=src_vocab, tgt_vocab=tgt_vocab, emb_dim=emb,
                      hidden_dim=hidden, dropout_rate=kw.pop("dropout_rate", 0.0), seed=seed, **kw)
    params = init_params(cfg)
    rng = np.random.default_rng(seed + 1000)
    for name in params:
        params[name] = rng.uniform(-scale, scale, size=params[name].shape)
    return cfg, params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one PASS/FAIL line per acceptance criterion for the end-of-run summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
