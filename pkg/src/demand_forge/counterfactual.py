"""Counterfactual image-score scenarios, sales and revenue simulation, and the advertising-equivalence search."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd

from .equilibrium import recover_costs, solve_bertrand
from .errors import BracketFailure, MissingResidual, ScenarioError
from .parallel import map_ordered
from .shares import market_snapshots, stacked_shares

logger = logging.getLogger(__name__)

ImageKind = Literal['identity', 'mean_of_rivals', 'rival', 'custom']


@dataclass(frozen=True)
class ImageRule:
    """How the target firm's image score is replaced.

    ``mean_of_rivals`` takes the unweighted per-period mean over every other firm, ``rival`` copies
    ``rival_firm``'s series, and ``custom`` uses ``series`` (period to score, in regression units).
    """

    kind: ImageKind = 'identity'
    target_firm: Optional[str] = None
    rival_firm: Optional[str] = None
    series: Optional[Dict[int, float]] = None

    def __post_init__(self) -> None:
        if self.kind not in ('identity', 'mean_of_rivals', 'rival', 'custom'):
            raise ScenarioError(f"Unknown image rule {self.kind!r}")
        if self.kind != 'identity' and self.target_firm is None:
            raise ScenarioError(f"Image rule {self.kind!r} needs a target firm")
        if self.kind == 'rival' and self.rival_firm is None:
            raise ScenarioError("Image rule 'rival' needs rival_firm")
        if self.kind == 'custom' and not self.series:
            raise ScenarioError("Image rule 'custom' needs a series")


@dataclass(frozen=True)
class Scenario:
    """A counterfactual: an image rule, an advertising multiplier for one firm and a pricing regime."""

    name: str = 'identity'
    image_rule: ImageRule = field(default_factory=ImageRule)
    ad_multiplier: float = 0.0
    ad_firm: Optional[str] = None
    pricing: Literal['regulated', 'bertrand'] = 'regulated'

    def __post_init__(self) -> None:
        if self.ad_multiplier < -1:
            raise ScenarioError("ad_multiplier must be at least -1")
        if self.pricing not in ('regulated', 'bertrand'):
            raise ScenarioError(f"Unknown pricing regime {self.pricing!r}")
        if self.ad_multiplier != 0 and self.advertiser is None:
            raise ScenarioError("A nonzero ad_multiplier needs ad_firm or an image target firm")

    @property
    def advertiser(self) -> Optional[str]:
        return self.ad_firm if self.ad_firm is not None else self.image_rule.target_firm

    @property
    def target_firm(self) -> Optional[str]:
        return self.image_rule.target_firm or self.ad_firm

    def with_multiplier(self, tau: float) -> 'Scenario':
        return Scenario(self.name, self.image_rule, tau, self.ad_firm, self.pricing)

    @classmethod
    def from_dict(cls, values: dict) -> 'Scenario':
        values = dict(values)
        rule = dict(values.pop('image_rule', {}) or {})
        if rule.get('series') is not None:
            rule['series'] = {int(k): float(v) for k, v in rule['series'].items()}
        unknown = set(values) - {'name', 'ad_multiplier', 'ad_firm', 'pricing'}
        if unknown:
            raise ScenarioError(f"Unknown scenario keys {sorted(unknown)}")
        return cls(image_rule=ImageRule(**rule), **values)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> 'Scenario':
        return cls.from_dict(json.loads(Path(path).read_text(encoding='utf-8')))


def firm_image_table(observations: pd.DataFrame) -> pd.DataFrame:
    """Firm-by-period image scores (periods as rows, firms as columns)."""
    table = observations.drop_duplicates(['firm_id', 'period'])
    return table.pivot(index='period', columns='firm_id', values='imgscore').sort_index()


def counterfactual_image(frame: pd.DataFrame, rule: ImageRule, images: Optional[pd.DataFrame] = None) -> np.ndarray:
    """Image score of every row of ``frame`` under ``rule``."""
    observed = frame['imgscore'].to_numpy(dtype=float)
    if rule.kind == 'identity':
        return observed.copy()
    if images is None:
        images = firm_image_table(frame)
    if rule.target_firm not in images.columns:
        raise ScenarioError(f"Unknown target firm {rule.target_firm!r}")
    if rule.kind == 'mean_of_rivals':
        rivals = [f for f in images.columns if f != rule.target_firm]
        if not rivals:
            raise ScenarioError("mean_of_rivals needs at least one rival firm")
        replacement = images[rivals].mean(axis=1, skipna=True)
    elif rule.kind == 'rival':
        if rule.rival_firm not in images.columns:
            raise ScenarioError(f"Unknown rival firm {rule.rival_firm!r}")
        replacement = images[rule.rival_firm]
    else:
        replacement = pd.Series(rule.series, dtype=float)
    target = (frame['firm_id'] == rule.target_firm).to_numpy()
    periods = frame['period'].to_numpy()[target]
    values = replacement.reindex(periods).to_numpy()
    if np.isnan(values).any():
        missing = sorted(set(periods[np.isnan(values)].tolist()))[:10]
        raise ScenarioError(f"Replacement image series does not cover periods {missing}")
    result = observed.copy()
    result[target] = values
    return result


def cf_mean_utility(estimate, scenario: Scenario, images: Optional[pd.DataFrame] = None) -> np.ndarray:
    """Counterfactual mean utility of every row of the estimation sample.

    Starting from the fitted mean utility (which embeds the structural residual), only the image term and,
    for the advertising firm, the ``(1 + tau) * cumadv`` term change.
    """
    frame = estimate.data
    if 'xi_hat' not in frame or 'delta_hat' not in frame:
        raise MissingResidual("The estimate carries no fitted residuals")
    params = estimate.params
    delta = frame['delta_hat'].to_numpy(dtype=float)
    image = counterfactual_image(frame, scenario.image_rule, images)
    delta = delta + params.beta1 * (image - frame['imgscore'].to_numpy(dtype=float))
    if scenario.ad_multiplier != 0:
        advertiser = (frame['firm_id'] == scenario.advertiser).to_numpy()
        if not advertiser.any():
            raise ScenarioError(f"Unknown advertising firm {scenario.advertiser!r}")
        delta = delta + params.beta2 * scenario.ad_multiplier * frame['cumadv'].to_numpy(dtype=float) * advertiser
    return delta


@dataclass
class CounterfactualReport:
    """Observed and simulated outcomes.

    Attributes
    ----------
    rows : `DataFrame`
        One row per observation with observed and simulated price, volume and revenue.
    firms : `DataFrame`
        Firm totals with percentage gaps ``100 * (observed - simulated) / observed`` and a final ``Total`` row.
    monthly : `DataFrame`
        Per firm and period totals, gaps and sales shares, ready for plotting.
    images : `DataFrame`
        Observed and counterfactual image score of every firm by period.
    """

    scenario: Scenario
    rows: pd.DataFrame
    firms: pd.DataFrame
    monthly: pd.DataFrame
    images: pd.DataFrame

    def firm_revenue(self, firm: str, periods=None) -> float:
        rows = self.rows if periods is None else self.rows[self.rows['period'].isin(periods)]
        return float(rows.loc[rows['firm_id'] == firm, 'simulated_revenue'].sum())


def _simulated_outcomes(frame, params, delta_cf, scenario, threads):
    prices = frame['price'].to_numpy(dtype=float)
    if scenario.pricing == 'regulated':
        result = stacked_shares(delta_cf, frame['group_id'].factorize()[0], params.effective_sigma,
                                frame['market'].to_numpy())
        simulated_prices = prices.copy()
        shares = result.shares
    else:
        simulated_prices = np.empty_like(prices)
        shares = np.empty_like(prices)
        work = frame.assign(_delta_cf=delta_cf)

        def one_market(item):
            _, rows, snap = item
            costs = recover_costs(snap, params)
            cf_snap = snap.with_delta(work['_delta_cf'].to_numpy()[rows])
            solution = solve_bertrand(costs, params, cf_snap)
            return rows, solution.prices, solution.shares.shares

        for rows, p, s in map_ordered(one_market, market_snapshots(work, 'delta_hat', params), threads):
            simulated_prices[rows] = p
            shares[rows] = s
    if params.model_kind == 'cenl':
        volume = shares * frame['expenditure_size'].to_numpy() / simulated_prices
    else:
        volume = shares * frame['market_size'].to_numpy()
    return simulated_prices, volume


def _gap(observed, simulated):
    observed = np.asarray(observed, dtype=float)
    with np.errstate(invalid='ignore', divide='ignore'):
        return 100 * (observed - simulated) / observed


def simulate(ds, estimate, scenario: Scenario, threads: Optional[int] = 1) -> CounterfactualReport:
    """Simulate volumes and revenues of the estimation sample under ``scenario``.

    Image scores for the replacement rules are taken from the full dataset ``ds`` when it carries them, so
    rows dropped from estimation still inform rival means.
    """
    frame = estimate.data
    params = estimate.params
    source = ds.observations if ds is not None and 'imgscore' in ds.observations else frame
    images = firm_image_table(source)
    delta_cf = cf_mean_utility(estimate, scenario, images)
    simulated_prices, volume = _simulated_outcomes(frame, params, delta_cf, scenario, threads)

    rows = pd.DataFrame({
        'product_id': frame['product_id'].to_numpy(), 'firm_id': frame['firm_id'].to_numpy(),
        'region_id': frame['region_id'].to_numpy(), 'period': frame['period'].to_numpy(),
        'market': frame['market'].to_numpy(),
        'observed_price': frame['price'].to_numpy(dtype=float), 'simulated_price': simulated_prices,
        'observed_volume': frame['volume'].to_numpy(dtype=float), 'simulated_volume': volume,
    })
    rows['observed_revenue'] = rows['observed_price'] * rows['observed_volume']
    rows['simulated_revenue'] = rows['simulated_price'] * rows['simulated_volume']

    value_columns = ['observed_volume', 'simulated_volume', 'observed_revenue', 'simulated_revenue']
    firms = rows.groupby('firm_id', sort=True)[value_columns].sum().reset_index()
    total = firms[value_columns].sum().to_frame().T.assign(firm_id='Total')
    firms = pd.concat([firms, total[['firm_id'] + value_columns]], ignore_index=True)
    firms['volume_gap_pct'] = _gap(firms['observed_volume'], firms['simulated_volume'])
    firms['revenue_gap_pct'] = _gap(firms['observed_revenue'], firms['simulated_revenue'])
    firms = firms[['firm_id', 'observed_volume', 'simulated_volume', 'volume_gap_pct', 'observed_revenue',
                   'simulated_revenue', 'revenue_gap_pct']]

    monthly = rows.groupby(['period', 'firm_id'], sort=True)[value_columns].sum().reset_index()
    period_totals = monthly.groupby('period')[value_columns].transform('sum')
    monthly['volume_gap'] = monthly['observed_volume'] - monthly['simulated_volume']
    monthly['revenue_gap'] = monthly['observed_revenue'] - monthly['simulated_revenue']
    monthly['revenue_gap_pct'] = _gap(monthly['observed_revenue'], monthly['simulated_revenue'])
    monthly['observed_sales_share'] = monthly['observed_volume'] / period_totals['observed_volume']
    monthly['simulated_sales_share'] = monthly['simulated_volume'] / period_totals['simulated_volume']

    image_cf = counterfactual_image(source, scenario.image_rule, images)
    image_frame = source[['period', 'firm_id', 'imgscore']].assign(counterfactual_imgscore=image_cf)
    image_frame = image_frame.drop_duplicates(['period', 'firm_id']).sort_values(['period', 'firm_id'])
    image_frame = image_frame.rename(columns={'imgscore': 'observed_imgscore'}).reset_index(drop=True)
    return CounterfactualReport(scenario, rows, firms, monthly, image_frame)


@dataclass
class TauResult:
    tau: float
    target_revenue: float
    revenue_curve: pd.DataFrame
    iterations: int


def ad_equivalence_tau(
        ds, estimate, scenario: Scenario, target_revenue: Optional[float] = None, tau_max: float = 2.0,
        grid_step: float = 0.2, grid_max: float = 1.0, tol: float = 1e-8, periods=None,
        max_iterations: int = 200, threads: Optional[int] = 1) -> TauResult:
    """Advertising multiplier that restores the advertiser's revenue under ``scenario``'s image rule.

    ``target_revenue`` defaults to the advertiser's observed revenue (over ``periods`` when given). Revenue must
    be non-decreasing in the multiplier over the sampled grid; the root is bracketed in ``[0, tau_max]`` and
    found by bisection to relative accuracy ``tol``. The returned curve samples revenue on
    ``0, grid_step, ..., grid_max`` and at ``tau_max``.
    """
    firm = scenario.advertiser
    if firm is None:
        raise BracketFailure("The scenario names no advertising firm")

    def revenue(tau: float) -> float:
        return simulate(ds, estimate, scenario.with_multiplier(tau), threads).firm_revenue(firm, periods)

    if target_revenue is None:
        rows = estimate.data if periods is None else estimate.data[estimate.data['period'].isin(periods)]
        target_revenue = float((rows['price'] * rows['volume'])[rows['firm_id'] == firm].sum())
    grid = np.round(np.arange(0.0, grid_max + grid_step / 2, grid_step), 12)
    grid = np.unique(np.append(grid, tau_max))
    curve = pd.DataFrame({'tau': grid, 'revenue': [revenue(t) for t in grid]})
    curve['target_revenue'] = target_revenue
    values = curve['revenue'].to_numpy()
    if np.any(np.diff(values) < -1e-12 * np.abs(values[:-1])):
        raise BracketFailure("Revenue is not monotone in the advertising multiplier")

    low, high = 0.0, float(tau_max)
    rev_low = float(values[0])
    if abs(rev_low - target_revenue) <= tol * abs(target_revenue):
        return TauResult(0.0, target_revenue, curve, 0)
    rev_high = float(values[grid == tau_max][0])
    if rev_low > target_revenue or rev_high < target_revenue:
        raise BracketFailure(
            f"Target revenue {target_revenue:.6g} is outside [{rev_low:.6g}, {rev_high:.6g}] on tau in [0, {tau_max}]")
    for iteration in range(1, max_iterations + 1):
        middle = (low + high) / 2
        rev_middle = revenue(middle)
        if abs(rev_middle - target_revenue) <= tol * abs(target_revenue):
            return TauResult(middle, target_revenue, curve, iteration)
        if rev_middle < target_revenue:
            low = middle
        else:
            high = middle
    raise BracketFailure(f"Bisection did not reach tolerance in {max_iterations} iterations")
