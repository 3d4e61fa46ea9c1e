"""Synthetic panels drawn from the nested logit model with known parameters, and a grid-search Bertrand oracle.

The generator reproduces the identifying structure the estimator relies on:

* prices load on the market-level demand shock ``xi`` (price endogeneity);
* prices share product-by-period cost shocks across regions (the Hausman instrument is relevant), while
  ``xi`` is independent across regions (the instrument is valid);
* products enter mid-sample and are randomly unavailable in some markets, so the number of rival products in a
  group varies (the within-share instrument is relevant);
* shares are the exact model shares, so inverting them returns the constructed mean utilities.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import scipy.optimize

from .errors import DegenerateMarket, GridTooCoarse
from .kernels import KernelSpec, entity_scores
from .panel import PanelDataset
from .shares import MarketSnapshot, UtilityParams, stacked_shares


@dataclass(frozen=True)
class SynthConfig:
    """Ground truth and randomness controls for :func:`generate`.

    Prices are in thousands of currency units, advertising in currency units, and scores are divided by
    ``image_divisor`` and ``adv_divisor`` before entering utility. Periods are month indices
    ``12 * year + month - 1`` starting at ``start_period``.
    """

    alpha: float = -0.578
    sigma: float = 0.819
    beta1: float = 0.177
    beta2: float = 0.283
    firm_products: Tuple[int, ...] = (17, 7, 4, 2)
    group_products: Tuple[int, ...] = (19, 3, 6, 2)
    group_names: Tuple[str, ...] = ('red', 'white', 'soupless', 'cold')
    cold_group: Optional[str] = 'cold'
    n_regions: int = 6
    n_periods: int = 113
    start_period: int = 2010 * 12 + 7
    outside_share: float = 0.65
    xi_sd: float = 0.25
    endogeneity: float = 0.15
    cost_shock_sd: float = 0.04
    price_noise_sd: float = 0.01
    base_price_mean: float = 0.85
    base_price_sd: float = 0.08
    product_effect_sd: float = 0.15
    region_effect_sd: float = 0.1
    time_effect_sd: float = 0.02
    cold_season_amplitude: float = 0.6
    late_entry_fraction: float = 0.1
    missing_probability: float = 0.035
    population_range: Tuple[float, float] = (2e6, 1.2e7)
    size_unit: float = 10.0
    target_firm: int = 1
    news_base: float = 4.0
    news_target_start: float = 4.0
    news_target_end: float = 16.0
    news_rise_from: float = 0.4
    adv_mean: float = 2e9
    adv_campaign_probability: float = 0.6
    image_kernel: KernelSpec = field(default_factory=KernelSpec)
    adv_kernel: KernelSpec = field(default_factory=KernelSpec)
    image_divisor: float = 100.0
    adv_divisor: float = 1e10
    seed: int = 0

    @property
    def params(self) -> UtilityParams:
        return UtilityParams(self.alpha, self.sigma, self.beta1, self.beta2)

    @property
    def firm_ids(self) -> Tuple[str, ...]:
        return tuple(f'F{i + 1}' for i in range(len(self.firm_products)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> 'SynthConfig':
        values = dict(values)
        for key in ('image_kernel', 'adv_kernel'):
            if isinstance(values.get(key), dict):
                values[key] = KernelSpec(**values[key])
        for key in ('firm_products', 'group_products', 'group_names', 'population_range'):
            if key in values and values[key] is not None:
                values[key] = tuple(values[key])
        return cls(**values)


@dataclass
class SyntheticPanel:
    """A generated dataset together with the quantities used to build it (aligned with its observations)."""

    dataset: PanelDataset
    delta: np.ndarray
    xi: np.ndarray
    config: SynthConfig


def _streams(seed: int, names):
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def simulate_panel(cfg: SynthConfig) -> SyntheticPanel:
    """Draw a panel from ``cfg``; see the module docstring for the structure it guarantees."""
    if sum(cfg.firm_products) != sum(cfg.group_products):
        raise ValueError("firm_products and group_products must count the same products")
    if len(cfg.group_names) != len(cfg.group_products):
        raise ValueError("group_names and group_products must have the same length")
    rng = _streams(cfg.seed, ['products', 'availability', 'news', 'adv', 'effects', 'costs', 'xi', 'population'])
    n_products, n_regions, n_periods = sum(cfg.firm_products), cfg.n_regions, cfg.n_periods
    periods = cfg.start_period + np.arange(n_periods)
    regions = np.array([f'R{r + 1}' for r in range(n_regions)])

    # products: firms own contiguous blocks; groups are shuffled across them
    firms = np.repeat(np.array(cfg.firm_ids), cfg.firm_products)
    groups = rng['products'].permutation(np.repeat(np.array(cfg.group_names), cfg.group_products))
    product_ids = np.array([f'P{j + 1:02d}' for j in range(n_products)])
    within_firm = np.concatenate([np.arange(n) for n in cfg.firm_products])
    brands = np.array([f'{f}B{i // 2 + 1}' for f, i in zip(firms, within_firm)])
    is_cold = groups == cfg.cold_group if cfg.cold_group is not None else np.zeros(n_products, bool)
    entry = np.zeros(n_products, dtype=np.int64)
    late = rng['products'].random(n_products) < cfg.late_entry_fraction
    entry[late] = rng['products'].integers(1, max(2, int(0.7 * n_periods)), late.sum())

    # long panel of (period, region, product) with entry and random gaps
    t_idx, r_idx, j_idx = (a.ravel() for a in np.meshgrid(
        np.arange(n_periods), np.arange(n_regions), np.arange(n_products), indexing='ij'))
    available = t_idx >= entry[j_idx]
    available &= rng['availability'].random(t_idx.size) >= cfg.missing_probability
    t_idx, r_idx, j_idx = t_idx[available], r_idx[available], j_idx[available]
    market_idx = t_idx * n_regions + r_idx

    # firm news counts and brand advertising, national by period
    firm_index = {f: i for i, f in enumerate(cfg.firm_ids)}
    rates = np.full((n_periods, len(cfg.firm_ids)), cfg.news_base)
    if cfg.target_firm is not None:
        rise = int(round(cfg.news_rise_from * n_periods))
        rates[:rise, cfg.target_firm] = cfg.news_target_start
        rates[rise:, cfg.target_firm] = np.linspace(cfg.news_target_start, cfg.news_target_end, n_periods - rise)
    news = rng['news'].poisson(rates)
    unique_brands = np.unique(brands)
    campaigns = rng['adv'].random((n_periods, unique_brands.size)) < cfg.adv_campaign_probability
    spend = rng['adv'].gamma(2.0, cfg.adv_mean / 2, (n_periods, unique_brands.size)) * campaigns
    spend = np.round(spend)

    brand_col = np.searchsorted(unique_brands, brands)
    firm_col = np.array([firm_index[f] for f in firms])
    raw = pd.DataFrame({
        'period': periods[t_idx], 'firm_id': firms[j_idx], 'brand_id': brands[j_idx],
        'news_raw': news[t_idx, firm_col[j_idx]], 'adv_raw': spend[t_idx, brand_col[j_idx]],
    })
    # scores use only what the panel records, exactly as attach_scores will
    image = entity_scores(raw, 'firm_id', 'news_raw', cfg.image_kernel, periods[0], periods[-1])
    cumadv = entity_scores(raw, 'brand_id', 'adv_raw', cfg.adv_kernel, periods[0], periods[-1])
    imgscore = raw[['firm_id', 'period']].merge(image, on=['firm_id', 'period'], how='left')['score'].to_numpy()
    cum = raw[['brand_id', 'period']].merge(cumadv, on=['brand_id', 'period'], how='left')['score'].to_numpy()
    imgscore = imgscore / cfg.image_divisor
    cum = cum / cfg.adv_divisor

    # demand: fixed effects, prices with common cost shocks and endogenous loading, exact shares
    effects = rng['effects']
    product_effect = effects.normal(0, cfg.product_effect_sd, n_products)
    region_effect = effects.normal(0, cfg.region_effect_sd, n_regions)
    time_effect = np.cumsum(effects.normal(0, cfg.time_effect_sd, n_periods))
    month = periods % 12 + 1
    season = cfg.cold_season_amplitude * np.cos(2 * np.pi * (month - 7) / 12)
    base_price = np.clip(rng['costs'].normal(cfg.base_price_mean, cfg.base_price_sd, n_products), 0.3, None)
    cost_shock = np.zeros((n_periods, n_products))
    innovations = rng['costs'].normal(0, cfg.cost_shock_sd, (n_periods, n_products))
    for t in range(n_periods):
        cost_shock[t] = (0.8 * cost_shock[t - 1] if t else 0) + innovations[t]
    xi = rng['xi'].normal(0, cfg.xi_sd, t_idx.size)
    noise = rng['costs'].normal(0, cfg.price_noise_sd, t_idx.size)
    price = base_price[j_idx] + cost_shock[t_idx, j_idx] + cfg.endogeneity * xi + noise
    if np.any(price <= 0.05):
        raise DegenerateMarket("Drawn prices are not positive; lower the shock variances")

    base_delta = (cfg.alpha * price + cfg.beta1 * imgscore + cfg.beta2 * cum + product_effect[j_idx]
                  + region_effect[r_idx] + time_effect[t_idx] + season[t_idx] * is_cold[j_idx] + xi)
    group_codes = np.searchsorted(np.array(sorted(cfg.group_names)), groups)[j_idx]
    n_markets = n_periods * n_regions

    def mean_outside(constant: float) -> float:
        return stacked_shares(base_delta + constant, group_codes, cfg.sigma, market_idx, n_markets).outside.mean()

    constant = scipy.optimize.brentq(lambda c: mean_outside(c) - cfg.outside_share, -30, 30, xtol=1e-12)
    delta = base_delta + constant
    shares = stacked_shares(delta, group_codes, cfg.sigma, market_idx, n_markets)
    if np.any(shares.outside <= 0) or np.any(shares.shares <= 0):
        raise DegenerateMarket("Generated shares leave no room for the outside good")

    population = np.round(rng['population'].uniform(*cfg.population_range, n_regions))
    market_size = population[r_idx] * cfg.size_unit
    volume = shares.shares * market_size
    observations = pd.DataFrame({
        'product_id': product_ids[j_idx], 'firm_id': firms[j_idx], 'brand_id': brands[j_idx],
        'group_id': groups[j_idx], 'is_cold': is_cold[j_idx], 'region_id': regions[r_idx],
        'period': periods[t_idx], 'price': price, 'volume': volume,
        'adv_raw': raw['adv_raw'].to_numpy(), 'news_raw': raw['news_raw'].to_numpy(),
    })
    revenue = pd.Series(price * volume).groupby([r_idx, t_idx]).sum()
    by_region = revenue.groupby(level=0)
    expenditure = np.maximum(2 * by_region.mean(), 1.25 * by_region.max()).to_numpy()
    markets = pd.DataFrame({
        'region_id': np.tile(regions, n_periods), 'period': np.repeat(periods, n_regions),
        'population': np.tile(population, n_periods), 'size_unit': cfg.size_unit,
        'expenditure_size': np.tile(expenditure, n_periods),
    })
    dataset = PanelDataset.from_frames(observations, markets)

    # realign the truth with the dataset's canonical row order
    key = pd.MultiIndex.from_arrays([periods[t_idx], regions[r_idx], product_ids[j_idx]])
    order = key.get_indexer(pd.MultiIndex.from_frame(dataset.observations[['period', 'region_id', 'product_id']]))
    return SyntheticPanel(dataset, delta[order], xi[order], cfg)


def generate(cfg: SynthConfig) -> PanelDataset:
    """Draw a synthetic :class:`PanelDataset`."""
    return simulate_panel(cfg).dataset


def brute_force_bertrand(
        costs: np.ndarray, params: UtilityParams, snap: MarketSnapshot, bracket: Tuple[float, float],
        grid_step: float = 1e-6, ownership: Optional[np.ndarray] = None, max_rounds: int = 500) -> np.ndarray:
    """Equilibrium prices of a market with at most two products by best-response iteration on price grids.

    Each best response maximizes the owning firm's profit over a grid on ``bracket``, refined around the
    maximizer until the spacing reaches ``grid_step``. Rounds repeat until no price moves by more than half a
    grid step. :class:`GridTooCoarse` signals a maximizer on the bracket edge.
    """
    costs = np.asarray(costs, dtype=float)
    n = costs.size
    if n > 2:
        raise ValueError("The grid oracle handles at most two products")
    if ownership is None:
        ownership = snap.ownership
    low, high = bracket
    prices = np.clip(np.asarray(snap.prices, dtype=float), low, high)
    groups = np.asarray(snap.group_codes)

    def profits(j: int, candidates: np.ndarray) -> np.ndarray:
        trial = np.repeat(prices[None, :], candidates.size, axis=0)
        trial[:, j] = candidates
        delta = snap.delta[None, :] + params.price_term(trial) - params.price_term(snap.prices)[None, :]
        markets = np.repeat(np.arange(candidates.size), n)
        result = stacked_shares(delta.ravel(), np.tile(groups, candidates.size), params.effective_sigma, markets)
        shares = result.shares.reshape(candidates.size, n)
        quantities = shares / trial if params.model_kind == 'cenl' else shares
        owned = ownership[j].astype(bool)
        return ((trial - costs[None, :]) * quantities)[:, owned].sum(axis=1)

    def best_response(j: int) -> float:
        step = max(grid_step, (high - low) / 2000)
        candidates = np.arange(low, high + step / 2, step)
        values = profits(j, candidates)
        best = int(np.argmax(values))
        if best == 0 or best == candidates.size - 1:
            raise GridTooCoarse(f"Best response of product {j} lies on the bracket edge {candidates[best]:.6g}")
        center = candidates[best]
        while step > grid_step:
            previous = step
            step = max(grid_step, step / 100)
            candidates = np.arange(max(low, center - previous), min(high, center + previous) + step / 2, step)
            center = candidates[int(np.argmax(profits(j, candidates)))]
        return float(center)

    for _ in range(max_rounds):
        moved = 0.0
        for j in range(n):
            new = best_response(j)
            moved = max(moved, abs(new - prices[j]))
            prices[j] = new
        if moved <= grid_step / 2:
            return prices
    raise GridTooCoarse(f"Best responses did not settle in {max_rounds} rounds")
