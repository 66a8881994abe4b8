import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("xreg", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("xreg")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config():
    """Two short trajectories per regime: a dataset small enough for unit tests."""
    from xreg.config import Config
    cfg = Config()
    s = cfg.synth
    s.windows_per_sequence, s.window, s.stride = 2, 3, 3
    s.train_sequences, s.test_sequences = 1, 1
    m = cfg.model
    m.d, m.heads, m.n_blocks, m.fourier_L, m.hidden, m.fine_dim = 16, 2, 1, 4, 16, 8
    cfg.ransac.iterations = 500
    return cfg


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """``(config, pairs, directory)`` for the tiny dataset, synthesized once per session."""
    from xreg.dataset import synthesize, write_dataset
    cfg = tiny_config()
    pairs = synthesize(cfg)
    root = tmp_path_factory.mktemp("tiny")
    write_dataset(root, pairs, cfg)
    return cfg, pairs, root


# one pass/fail line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
