import pytest

from roadlayout.probability import bin_specs
from roadlayout.sampler import PriorConfig, estimate_cooccurrence, sample_batch
from roadlayout.schema import SceneParams, default_schema


def minimal_values() -> dict:
    """Straight one-way road, no side lanes, 4 m ego-lane, nothing else."""
    schema = default_schema()
    values = {n: False for n in schema.binary_names}
    values.update({n: 0 for n in schema.multiclass_names})
    values.update({n: None for n in schema.continuous_names})
    values["oneway_main"] = True
    values["ego_lane_width"] = 4.0
    return values


@pytest.fixture
def minimal_scene() -> SceneParams:
    return SceneParams.from_dict(minimal_values())


@pytest.fixture(scope="session")
def specs():
    return bin_specs()


@pytest.fixture(scope="session")
def scenes():
    return sample_batch(PriorConfig(), 2024, 200).scenes


@pytest.fixture(scope="session")
def cooc():
    return estimate_cooccurrence(sample_batch(PriorConfig(), 12345, 10_000))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for the acceptance summary, then assert."""

    def check(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
