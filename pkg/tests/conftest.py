import os
import warnings

import pytest
from hypothesis import HealthCheck, settings

warnings.filterwarnings("ignore", message=".*TBB.*")

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def downtown():
    from synthrm.scenegen import BlockSpec, generate_city
    return generate_city(BlockSpec.for_archetype("Downtown", 240.0, seed=3))


@pytest.fixture(scope="session")
def margin():
    from synthrm.scenegen import BlockSpec, generate_city
    return generate_city(BlockSpec.for_archetype("Margin", 240.0, seed=3))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
