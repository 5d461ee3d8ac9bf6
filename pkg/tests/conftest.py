import numpy as np
import pytest

from seqvam import (GeneratorConfig, MissingnessMechanism, StudentRecord,
                    apply_missingness, build_design, panel_from_records,
                    simulate_panel)


def make_small_panel():
    """Six students, two years, two teachers per year, mixed patterns."""
    records = [
        StudentRecord("s1", (0.5, 1.0, None, None, None), ("a1", "b1", None, None, None)),
        StudentRecord("s2", (-0.2, 0.3, None, None, None), ("a1", "b2", None, None, None)),
        StudentRecord("s3", (0.1, None, None, None, None), ("a2", None, None, None, None)),
        StudentRecord("s4", (None, 0.8, None, None, None), ("a2", "b1", None, None, None)),
        StudentRecord("s5", (0.9, 0.7, None, None, None), ("a1", "b2", None, None, None)),
        StudentRecord("s6", (None, -0.5, None, None, None), (None, "b2", None, None, None)),
    ]
    return panel_from_records(records)


@pytest.fixture
def small_panel():
    return make_small_panel()


@pytest.fixture
def small_design(small_panel):
    return build_design(small_panel)


@pytest.fixture(scope="session")
def sim_panel_complete():
    cfg = GeneratorConfig(students=150, teachers_per_year=5, seed=11)
    return simulate_panel(cfg)


@pytest.fixture(scope="session")
def sim_panel_missing(sim_panel_complete):
    panel, truth = sim_panel_complete
    mech = MissingnessMechanism(kind="mcar", rate=0.3)
    return apply_missingness(panel, truth, mech, seed=12), truth


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
