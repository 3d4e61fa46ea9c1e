import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from demand_forge.errors import (
    DataError, DuplicateKey, InconsistentSeries, MarketSizeViolation, MissingColumn, NegativeInput, OrphanProduct,
    ZeroGroupShare
)
from demand_forge.panel import (
    OBSERVATION_COLUMNS, PanelDataset, compute_shares, load_panel, panel_to_csv, summarize, write_panel
)

from conftest import make_panel


def test_three_row_file_loads_and_shares_compute(tmp_path):
    obs = pd.DataFrame({
        'product_id': ['P1', 'P2', 'P1'], 'firm_id': ['F1', 'F2', 'F1'], 'brand_id': ['B1', 'B2', 'B1'],
        'group_id': ['red', 'red', 'red'], 'is_cold': [0, 0, 0], 'region_id': ['R1', 'R1', 'R2'],
        'period': [24000, 24000, 24000], 'price': [1.0, 1.2, 0.9], 'volume': [10.0, 20.0, 5.0],
        'adv_raw': [0.0, 1e9, 0.0], 'news_raw': [3, 1, 3],
    })
    markets = pd.DataFrame({'region_id': ['R1', 'R2'], 'period': [24000, 24000], 'population': [10.0, 10.0],
                            'size_unit': [10.0, 10.0], 'expenditure_size': [1e3, 1e3]})
    obs.to_csv(tmp_path / 'panel.csv', index=False)
    markets.to_csv(tmp_path / 'markets.csv', index=False)
    ds = load_panel(tmp_path / 'panel.csv', tmp_path / 'markets.csv')
    assert len(ds) == 3
    shares = compute_shares(ds).observations
    assert shares['share'].tolist() == pytest.approx([0.1, 0.2, 0.05])


def test_canonical_order_and_market_codes():
    ds = make_panel([
        {'product_id': 'P2', 'region_id': 'R2', 'period': 1, 'volume': 1},
        {'product_id': 'P1', 'region_id': 'R1', 'period': 1, 'volume': 1},
        {'product_id': 'P1', 'region_id': 'R2', 'period': 0, 'volume': 1},
    ])
    obs = ds.observations
    assert list(zip(obs['period'], obs['region_id'], obs['product_id'])) == [
        (0, 'R2', 'P1'), (1, 'R1', 'P1'), (1, 'R2', 'P2')]
    markets = ds.markets
    assert (markets.loc[obs['market'], 'region_id'].to_numpy() == obs['region_id'].to_numpy()).all()


def test_duplicate_key_rejected():
    with pytest.raises(DuplicateKey):
        make_panel([{'product_id': 'P1', 'volume': 1}, {'product_id': 'P1', 'volume': 2}])


def test_volume_above_market_size_rejected():
    with pytest.raises(MarketSizeViolation):
        make_panel([{'product_id': 'P1', 'volume': 60}, {'product_id': 'P2', 'volume': 50}], population=100)


def test_revenue_above_expenditure_rejected():
    with pytest.raises(MarketSizeViolation):
        make_panel([{'product_id': 'P1', 'volume': 10, 'price': 20.0}], expenditure=150.0)


def test_missing_market_definition_is_orphan():
    markets = pd.DataFrame({'region_id': ['R1'], 'period': [0], 'population': [100.0], 'size_unit': [1.0],
                            'expenditure_size': [1e6]})
    with pytest.raises(OrphanProduct):
        make_panel([{'product_id': 'P1', 'volume': 1}, {'product_id': 'P1', 'period': 1, 'volume': 1}], markets)


def test_products_table_must_cover_observations():
    obs = pd.DataFrame({'product_id': ['P1', 'P9'], 'region_id': ['R1', 'R1'], 'period': [0, 0],
                        'price': [1.0, 1.0], 'volume': [1.0, 1.0], 'adv_raw': [0.0, 0.0], 'news_raw': [0, 0]})
    products = pd.DataFrame({'product_id': ['P1'], 'firm_id': ['F1'], 'brand_id': ['B1'], 'group_id': ['red'],
                             'is_cold': [False]})
    markets = pd.DataFrame({'region_id': ['R1'], 'period': [0], 'population': [100.0], 'size_unit': [1.0],
                            'expenditure_size': [1e6]})
    with pytest.raises(OrphanProduct):
        PanelDataset.from_frames(obs, markets, products)


def test_missing_column_reported(tmp_path):
    pd.DataFrame({'product_id': ['P1']}).to_csv(tmp_path / 'panel.csv', index=False)
    pd.DataFrame({'region_id': ['R1']}).to_csv(tmp_path / 'markets.csv', index=False)
    with pytest.raises(MissingColumn):
        load_panel(tmp_path / 'panel.csv', tmp_path / 'markets.csv')


@pytest.mark.parametrize('row, error', [
    ({'volume': -1}, NegativeInput),
    ({'volume': 1, 'adv_raw': -5.0}, NegativeInput),
    ({'volume': 1, 'price': 0.0}, DataError),
    ({'volume': 1, 'news_raw': 1.5}, DataError),
])
def test_invalid_values_rejected(row, error):
    with pytest.raises(error):
        make_panel([{'product_id': 'P1', **row}])


def test_inconsistent_metadata_rejected():
    with pytest.raises(InconsistentSeries):
        make_panel([{'product_id': 'P1', 'volume': 1, 'group_id': 'red'},
                    {'product_id': 'P1', 'region_id': 'R2', 'volume': 1, 'group_id': 'white'}])


def test_inconsistent_national_series_rejected():
    with pytest.raises(InconsistentSeries):
        make_panel([{'product_id': 'P1', 'volume': 1, 'news_raw': 3},
                    {'product_id': 'P2', 'volume': 1, 'news_raw': 4}])


def test_single_product_shares():
    ds = compute_shares(make_panel([{'product_id': 'P1', 'volume': 25}], population=100))
    row = ds.observations.iloc[0]
    assert row['share'] == 0.25
    assert row['within_share'] == 1.0
    assert ds.markets['outside_share'].iloc[0] == 0.75


def test_within_group_shares():
    ds = compute_shares(make_panel([{'product_id': 'P1', 'volume': 10}, {'product_id': 'P2', 'volume': 30}]))
    assert ds.observations['within_share'].tolist() == pytest.approx([0.25, 0.75], abs=1e-15)


def test_market_without_products_has_unit_outside_share():
    markets = pd.DataFrame({'region_id': ['R1', 'R2'], 'period': [0, 0], 'population': [100.0, 100.0],
                            'size_unit': [1.0, 1.0], 'expenditure_size': [1e6, 1e6]})
    ds = compute_shares(make_panel([{'product_id': 'P1', 'volume': 10}], markets))
    assert len(ds.observations) == 1
    assert ds.markets.set_index('region_id').loc['R2', 'outside_share'] == 1.0


def test_zero_group_volume_rejected():
    with pytest.raises(ZeroGroupShare):
        compute_shares(make_panel([{'product_id': 'P1', 'volume': 0}]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.floats(0.1, 20.0)), min_size=1, max_size=12))
def test_shares_sum_to_one_per_market(rows):
    records = [{'product_id': f'P{i}', 'region_id': f'R{r}', 'group_id': ['red', 'white'][i % 2], 'volume': v}
               for i, (r, v) in enumerate(rows)]
    ds = compute_shares(make_panel(records, population=1000))
    obs = ds.observations
    inside = obs.groupby('market')['share'].sum().reindex(range(len(ds.markets)), fill_value=0)
    np.testing.assert_allclose(inside.to_numpy() + ds.markets['outside_share'].to_numpy(), 1.0, atol=1e-12)
    within_total = obs.groupby(['market', 'group_id'])['within_share'].sum()
    np.testing.assert_allclose(within_total.to_numpy(), 1.0, atol=1e-12)


def test_csv_round_trip_is_byte_identical(tmp_path, small_panel):
    ds = small_panel.dataset
    write_panel(ds, tmp_path / 'panel.csv', tmp_path / 'markets.csv')
    again = load_panel(tmp_path / 'panel.csv', tmp_path / 'markets.csv')
    assert panel_to_csv(again) == panel_to_csv(ds)
    assert (tmp_path / 'panel.csv').read_text().splitlines()[0] == ','.join(OBSERVATION_COLUMNS)


def test_metadata_views(small_panel):
    ds = small_panel.dataset
    assert len(ds.products) == 12
    assert sum(len(v) for v in ds.ownership.values()) == 12
    assert len(ds.market_defs) == len(ds.markets)
    assert ds.market_defs[0].market_size == ds.markets['market_size'].iloc[0]


def test_summary_covers_groups_and_firms(small_panel):
    table = summarize(small_panel.dataset)
    assert set(table['by']) == {'group', 'firm'}
    assert table.loc[table['by'] == 'firm', 'n_obs'].sum() == len(small_panel.dataset)
