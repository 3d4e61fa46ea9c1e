import dataclasses

import numpy as np
import pytest

from demand_forge.errors import DegenerateMarket
from demand_forge.panel import compute_shares, panel_to_csv
from demand_forge.shares import invert_shares
from demand_forge.synth import SynthConfig, generate, simulate_panel


def test_same_seed_same_bytes(small_config):
    assert panel_to_csv(generate(small_config)) == panel_to_csv(generate(small_config))


def test_different_seeds_differ(small_config):
    other = dataclasses.replace(small_config, seed=small_config.seed + 1)
    assert panel_to_csv(generate(other)) != panel_to_csv(generate(small_config))


def test_default_scale():
    cfg = SynthConfig()
    ds = generate(cfg)
    assert ds.observations['product_id'].nunique() == 30
    assert len(ds.markets) == cfg.n_regions * cfg.n_periods == 678
    assert 18_500 < len(ds) < 19_500
    assert sorted(ds.observations['group_id'].unique()) == ['cold', 'red', 'soupless', 'white']


def test_shares_invert_to_constructed_utilities(small_panel, small_config):
    ds = compute_shares(small_panel.dataset)
    obs = ds.observations
    outside = ds.markets['outside_share'].to_numpy()[obs['market']]
    recovered = invert_shares(obs['share'], obs['within_share'], outside, small_config.sigma)
    np.testing.assert_allclose(recovered, small_panel.delta, atol=1e-10 * np.abs(small_panel.delta).max())
    assert (ds.markets['outside_share'] > 0).all()


def test_outside_share_calibrated(small_panel, small_config):
    markets = compute_shares(small_panel.dataset).markets
    assert markets['outside_share'].mean() == pytest.approx(small_config.outside_share, abs=1e-9)


def test_identifying_structure(small_panel):
    obs = small_panel.dataset.observations.assign(xi=small_panel.xi)
    # price loads on the demand shock
    assert np.corrcoef(obs['price'], obs['xi'])[0, 1] > 0.05
    # prices co-move across regions through common cost shocks
    wide = obs.pivot_table(index=['product_id', 'period'], columns='region_id', values='price')
    demeaned = wide.sub(wide.groupby(level='product_id').transform('mean'))
    assert demeaned.corr().to_numpy()[np.triu_indices(wide.shape[1], 1)].min() > 0.3
    # demand shocks do not
    xi_wide = obs.pivot_table(index=['product_id', 'period'], columns='region_id', values='xi')
    assert np.abs(xi_wide.corr().to_numpy()[np.triu_indices(wide.shape[1], 1)]).max() < 0.15


def test_target_firm_image_rises(default_scored):
    obs = default_scored.observations.drop_duplicates(['firm_id', 'period'])
    image = obs.pivot(index='period', columns='firm_id', values='imgscore')
    late = image.iloc[-12:].mean()
    assert late['F2'] > 2 * late.drop('F2').max()
    assert image['F2'].iloc[:12].mean() == pytest.approx(image.drop(columns='F2').iloc[:12].mean().mean(), rel=0.5)


def test_config_round_trip(small_config):
    assert SynthConfig.from_dict(small_config.to_dict()) == small_config


def test_inconsistent_counts_rejected():
    with pytest.raises(ValueError):
        generate(SynthConfig(firm_products=(3, 3), group_products=(2, 2, 2, 1)))


def test_degenerate_prices_rejected():
    with pytest.raises(DegenerateMarket):
        generate(SynthConfig(n_periods=20, base_price_mean=0.05, base_price_sd=0.0, cost_shock_sd=0.5))
