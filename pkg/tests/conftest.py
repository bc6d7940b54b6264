import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("dlpl", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dlpl")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


TINY = dict(img_size=16, patch=4, embed_dim=8, levels=2, c_prime=4, space_size=3, heads=2,
            num_blocks=2, rec_grid=2, num_classes=3, epochs=2, batch_size=4)


@pytest.fixture
def tiny_cfg():
    from dlpl.config import ModelConfig
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_data():
    from dlpl.harness import generate_dataset
    return generate_dataset(8, 4, num_classes=3, img_size=16, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
