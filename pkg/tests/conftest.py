import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=50
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def layout():
    from ltmsim.geometry import build_layout

    return build_layout()


@pytest.fixture(scope="session")
def small_cfg(tmp_path_factory):
    """Short scenario on a 64-tile panel with its own codebook cache."""
    from ltmsim.config import ScenarioConfig

    cache = tmp_path_factory.mktemp("codebooks")
    return ScenarioConfig().replace(
        sim={"duration_s": 6.0, "n_ues": 6, "n_replicates": 2},
        ris={"n_elements": 64, "max_iters": 200, "cache_dir": str(cache)},
        prediction={"horizon_s": 0.2},
    )


@pytest.fixture(scope="session")
def small_result(small_cfg):
    from ltmsim.simulator import run_scenario

    return run_scenario(small_cfg)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str, seconds: float, budget_s: float) -> bool:
        ok = passed and seconds < budget_s
        line = (f"criterion {criterion:<3} {'PASS' if ok else 'FAIL'}  {detail}  "
                f"[{seconds:.1f} s, budget {budget_s:.0f} s]")
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
