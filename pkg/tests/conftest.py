import pytest

from frfid.config import CampaignConfig, EstimatorEntry, default_config


def make_small_config(seed: int = 0, n_configs: int = 2, n_experiments: int = 3, fit: bool = True,
                      max_iter: int = 5) -> CampaignConfig:
    """Short campaign for pipeline tests: few lines, short periods."""
    cfg = default_config(seed)
    cfg.multisine.period_samples = 1000
    cfg.multisine.n_lines = 40
    cfg.simulation.n_experiments = n_experiments
    cfg.configurations.count = n_configs
    cfg.graybox.n_starts = 1
    cfg.graybox.max_iter = max_iter
    cfg.estimators = [EstimatorEntry("H1", 3, M=1), EstimatorEntry("LOG", 3, M=1, fit=fit),
                      EstimatorEntry("JIO", 3, M=1), EstimatorEntry("LRM_MIMO", 1, half_width=9),
                      EstimatorEntry("JIO_LRM", 1, half_width=9)]
    cfg.validate()
    return cfg


@pytest.fixture
def small_config():
    return make_small_config


ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str, seconds: float) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail} [{seconds:.1f} s]"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
