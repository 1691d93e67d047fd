from __future__ import annotations

import numpy as np
import pytest

from gdfq.layers import build_mlp
from gdfq.rng import stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    """2 -> 8 -> 8 -> 3 MLP with BN, running statistics perturbed away from (0, 1)."""
    m = build_mlp(2, [8, 8], 3, stream(7, "test-mlp"))
    r = np.random.default_rng(5)
    for bn in m.bn_layers():
        bn.running_mean = r.normal(size=bn.num_features)
        bn.running_var = r.uniform(0.5, 2.0, size=bn.num_features)
        bn.gamma.data[:] = r.uniform(0.5, 1.5, size=bn.num_features)
        bn.beta.data[:] = r.normal(scale=0.1, size=bn.num_features)
    m.set_bn_mode("eval")
    return m


@pytest.fixture(scope="session")
def toy_data():
    from gdfq.data import make_toy_dataset

    return make_toy_dataset(0, n=2000)


@pytest.fixture(scope="session")
def tiny_teacher(toy_data):
    """Small teacher trained briefly on the toy task; accuracy is not the point."""
    from gdfq.data import TeacherConfig, train_teacher

    model, _ = train_teacher(toy_data, TeacherConfig(hidden=(16, 16), epochs=15, batch_size=128, lr_decay_epochs=10))
    return model


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
