"""Shared fixtures and the acceptance-criterion reporter.

The expensive rate experiments are session-scoped so the acceptance criteria
that share them (offline/online slopes, the 3x comparison) pay for them once.
Each acceptance test registers a one-line verdict that is printed in the
terminal summary.
"""

import time

import pytest

_CRITERIA = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    _CRITERIA.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        verdict = "PASS" if passed else "FAIL"
        line = f"[{verdict}] {name}"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def oracle_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("oracle_cache")


@pytest.fixture(scope="session")
def rate_seeds():
    return list(range(20))


@pytest.fixture(scope="session")
def rate_T_grid():
    return [2**i for i in range(12, 18)]


def _rate_report(env_name, env_params, alg, T_grid, seeds, cache):
    import knnq

    config = knnq.ExperimentConfig(
        env_name=env_name, env_params=env_params, algorithm=alg,
        T_grid=T_grid, gamma_grid=[0.8], seeds=seeds)
    t0 = time.perf_counter()
    report = knnq.run_experiment(config, oracle_cache_dir=cache)
    report.extra["elapsed_s"] = time.perf_counter() - t0
    return report


@pytest.fixture(scope="session")
def offline_box_report(rate_T_grid, rate_seeds, oracle_cache):
    return _rate_report("box", {"dim": 1, "sigma": 0.25}, "offline",
                        rate_T_grid, rate_seeds, oracle_cache)


@pytest.fixture(scope="session")
def online_box_report(rate_T_grid, rate_seeds, oracle_cache):
    return _rate_report("box", {"dim": 1, "sigma": 0.25}, "online",
                        rate_T_grid, rate_seeds, oracle_cache)


@pytest.fixture(scope="session")
def offline_ar1_report(rate_T_grid, rate_seeds, oracle_cache):
    return _rate_report("ar1", {}, "offline", rate_T_grid, rate_seeds, oracle_cache)


@pytest.fixture(scope="session")
def online_ar1_report(rate_T_grid, rate_seeds, oracle_cache):
    return _rate_report("ar1", {}, "online", rate_T_grid, rate_seeds, oracle_cache)
