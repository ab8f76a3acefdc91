import pytest

from omicsurv.pipeline import KMeansConfig, PipelineConfig
from omicsurv.synthetic import SyntheticSpec, make_synthetic


@pytest.fixture
def tiny_config():
    return PipelineConfig(k_per_layer=20, n_fingerprints=4, hidden=8, epochs=5, folds=3,
                          repeats=1, master_seed=11,
                          kmeans=KMeansConfig(n_init=2, max_iter=50), dtype="float64")


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(90, (("a", 25), ("b", 30)), (("a", 2, 1.5), ("b", 7, -1.5)),
                         censoring_rate=0.3, seed=5)
    return make_synthetic(spec, name="small")


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
