import warnings

import numpy as np
import pandas as pd
import pytest

from demand_forge import DemandSpec, SynthConfig, attach_scores, estimate, simulate_panel
from demand_forge.panel import PanelDataset


def make_panel(rows, markets=None, population=100.0, expenditure=1e6):
    """Small dataset from dicts with only the interesting fields; the rest get harmless defaults."""
    defaults = {'firm_id': 'F1', 'brand_id': 'B1', 'group_id': 'red', 'is_cold': 0, 'region_id': 'R1',
                'period': 0, 'price': 1.0, 'adv_raw': 0.0, 'news_raw': 0}
    table = pd.DataFrame([{**defaults, **row} for row in rows])
    if markets is None:
        keys = table[['region_id', 'period']].drop_duplicates()
        markets = keys.assign(population=population, size_unit=1.0, expenditure_size=expenditure)
    return PanelDataset.from_frames(table, pd.DataFrame(markets))


@pytest.fixture(scope='session')
def small_config():
    """A reduced synthetic design that still identifies all four parameters."""
    return SynthConfig(firm_products=(5, 3, 2, 2), group_products=(6, 2, 2, 2), n_regions=4, n_periods=40, seed=11)


@pytest.fixture(scope='session')
def small_panel(small_config):
    return simulate_panel(small_config)


@pytest.fixture(scope='session')
def small_scored(small_panel):
    return attach_scores(small_panel.dataset)


@pytest.fixture(scope='session')
def small_estimate(small_scored):
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        return estimate(small_scored, DemandSpec())


@pytest.fixture(scope='session')
def default_panel():
    return simulate_panel(SynthConfig(seed=0))


@pytest.fixture(scope='session')
def default_scored(default_panel):
    return attach_scores(default_panel.dataset)


@pytest.fixture(scope='session')
def default_estimate(default_scored):
    return estimate(default_scored, DemandSpec())


def random_market(rng, n_products=5, n_groups=2, n_firms=2):
    groups = np.array([f'g{i % n_groups}' for i in range(n_products)])
    firms = np.array([f'f{i % n_firms}' for i in rng.permutation(n_products)])
    prices = rng.uniform(0.5, 2.0, n_products)
    delta = rng.normal(-1.0, 1.0, n_products)
    return groups, firms, prices, delta


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion and fail the test when it does not hold."""
    def check(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section('acceptance criteria')
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(':'))):
            terminalreporter.write_line(line)
