import sys
from pathlib import Path

import pytest

from uavmec.env import EnvConfig, Scenario
from uavmec.world import WorldConfig

TESTS = Path(__file__).parent
ROOT = TESTS.parent
sys.path.insert(0, str(TESTS))

FIXTURE_SCENARIO = ROOT / "configs" / "fixture_1uav_3sd_scenario.yaml"


def fixture_env_config(**weights) -> EnvConfig:
    """1 UAV / 3 SD instance used by oracle and rollout tests."""
    from uavmec.env import RewardWeights
    world = WorldConfig(area_side_m=400.0, num_uavs=1, num_sds=3, num_slots=10, grid_rows=1,
                        grid_cols=1, num_peer_uavs=0, max_served_sds=3)
    return EnvConfig(world=world, weights=RewardWeights(**weights), observed_sds=3)


@pytest.fixture
def fixture_config():
    return fixture_env_config()


@pytest.fixture
def fixture_scenario():
    return Scenario.load(FIXTURE_SCENARIO)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion's verdict for the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
