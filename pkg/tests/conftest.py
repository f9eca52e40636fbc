import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from rax.models import BoostingConfig, fit_gradient_boosting  # noqa: E402
from rax.store import SplitSpec, split_table  # noqa: E402
from rax.synth import SynthConfig, generate  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

from _util import ACCEPTANCE  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def planted():
    """Small planted synthetic data set split 6000/2000 by time."""
    table = generate(SynthConfig(n_events=8000, rng_seed=3))
    return split_table(table, SplitSpec(n_test=2000, n_train=6000))


@pytest.fixture(scope="session")
def small_boosted(planted):
    train, _ = planted
    cfg = BoostingConfig(n_rounds=30, max_depth=4, learning_rate=0.2, rng_seed=0)
    return fit_gradient_boosting(train.model_matrix(), train.label, config=cfg)
