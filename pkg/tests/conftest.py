import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sagan.dataio import SyntheticSpec, make_synthetic_dataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_ds():
    return make_synthetic_dataset(SyntheticSpec(n_seen=6, n_unseen=3, d_v=12, d_a=5, samples_per_class=20,
                                                noise_scale=0.1, seed=7))


@pytest.fixture(scope="session")
def tiny_bundle(tiny_ds):
    from sagan.generation import GanConfig, train_stage2
    from sagan.mapping import MappingConfig, train_mapping

    m = train_mapping(tiny_ds, MappingConfig(hidden=16, d_m=8, epochs=3, batch_size=32, lr=1e-3))
    return train_stage2(m.mapped_features, tiny_ds, m.prototypes,
                        GanConfig(hidden=16, epochs=2, batch_size=16, lr=1e-3), m.model).bundle


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = sorted(getattr(mod, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
