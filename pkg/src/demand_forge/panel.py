"""Canonical panel data model, CSV ingestion and market-share computation.

A panel is stored as two long-format tables. The observation table has one row per (product, region, period)
and carries the product metadata inline; the market table has one row per (region, period). Periods are integer
month indices with ``period = 12 * year + month - 1`` so that lags are plain integer differences and the calendar
month is ``period % 12 + 1``.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    DataError, DuplicateKey, InconsistentSeries, MarketSizeViolation, MissingColumn, NegativeInput, OrphanProduct,
    ZeroGroupShare
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

OBSERVATION_COLUMNS = [
    'product_id', 'firm_id', 'brand_id', 'group_id', 'is_cold', 'region_id', 'period', 'price', 'volume', 'adv_raw',
    'news_raw'
]
MARKET_COLUMNS = ['region_id', 'period', 'population', 'size_unit', 'expenditure_size']
PRODUCT_COLUMNS = ['product_id', 'firm_id', 'brand_id', 'group_id', 'is_cold']

_ID_COLUMNS = ['product_id', 'firm_id', 'brand_id', 'group_id', 'region_id']
_OBS_KEY = ['product_id', 'region_id', 'period']
_MARKET_KEY = ['region_id', 'period']


@dataclass(frozen=True)
class ProductMeta:
    product_id: str
    firm_id: str
    brand_id: str
    group_id: str
    is_cold: bool


@dataclass(frozen=True)
class MarketDef:
    region_id: str
    period: int
    population: float
    expenditure_size: float
    size_unit: float = 10.0

    @property
    def market_size(self) -> float:
        """Potential market size in packages."""
        return self.population * self.size_unit


@dataclass(frozen=True)
class PanelDataset:
    """Validated product-by-market panel.

    Attributes
    ----------
    observations : `DataFrame`
        One row per (product, region, period) in canonical order (period, region, product). Besides the CSV
        columns it holds ``market``, an integer code indexing :attr:`markets`, and ``market_size``. Augmenting
        operations such as :func:`compute_shares` add further columns.
    markets : `DataFrame`
        One row per (region, period) in canonical order, with ``market_size`` added.

    Instances are treated as immutable: every operation returns a new dataset.
    """

    observations: pd.DataFrame
    markets: pd.DataFrame

    @classmethod
    def from_frames(
            cls, observations: pd.DataFrame, markets: pd.DataFrame,
            products: Optional[pd.DataFrame] = None) -> 'PanelDataset':
        """Validate raw tables and build a dataset.

        If ``products`` is given, every product referenced by ``observations`` must appear in it and its metadata
        columns override any inline metadata.
        """
        obs = _coerce_observations(observations, products)
        mkts = _coerce_markets(markets)
        _validate(obs, mkts)
        obs = obs.sort_values(['period', 'region_id', 'product_id'], kind='mergesort').reset_index(drop=True)
        mkts = mkts.sort_values(['period', 'region_id'], kind='mergesort').reset_index(drop=True)
        mkts['market_size'] = mkts['population'] * mkts['size_unit']
        codes = pd.MultiIndex.from_frame(mkts[_MARKET_KEY])
        obs['market'] = codes.get_indexer(pd.MultiIndex.from_frame(obs[_MARKET_KEY])).astype(np.int64)
        obs['market_size'] = mkts['market_size'].to_numpy()[obs['market'].to_numpy()]
        obs['expenditure_size'] = mkts['expenditure_size'].to_numpy()[obs['market'].to_numpy()]
        return cls(obs, mkts)

    @property
    def products(self) -> List[ProductMeta]:
        table = self.observations.drop_duplicates('product_id').sort_values('product_id')
        return [
            ProductMeta(r.product_id, r.firm_id, r.brand_id, r.group_id, bool(r.is_cold))
            for r in table[PRODUCT_COLUMNS].itertuples(index=False)
        ]

    @property
    def ownership(self) -> Dict[str, Tuple[str, ...]]:
        """Map from firm to the sorted tuple of products it owns."""
        table = self.observations.drop_duplicates('product_id')
        return {f: tuple(sorted(g['product_id'])) for f, g in table.groupby('firm_id', sort=True)}

    @property
    def market_defs(self) -> List[MarketDef]:
        return [
            MarketDef(r.region_id, int(r.period), r.population, r.expenditure_size, r.size_unit)
            for r in self.markets[MARKET_COLUMNS].itertuples(index=False)
        ]

    def with_observations(self, observations: pd.DataFrame) -> 'PanelDataset':
        """Return a dataset sharing the market table with new (already validated) observation rows."""
        return PanelDataset(observations.reset_index(drop=True), self.markets)

    def with_markets(self, markets: pd.DataFrame) -> 'PanelDataset':
        return PanelDataset(self.observations, markets.reset_index(drop=True))

    def __len__(self) -> int:
        return len(self.observations)


def load_panel(csv_path: PathLike, markets_path: PathLike, products_path: Optional[PathLike] = None) -> PanelDataset:
    """Read the observation and market CSV files and return a validated :class:`PanelDataset`."""
    observations = _read_csv(csv_path, OBSERVATION_COLUMNS if products_path is None else _OBS_KEY)
    markets = _read_csv(markets_path, MARKET_COLUMNS)
    products = None if products_path is None else _read_csv(products_path, PRODUCT_COLUMNS)
    return PanelDataset.from_frames(observations, markets, products)


def panel_to_csv(ds: PanelDataset) -> str:
    """Serialize observations in the canonical CSV layout."""
    table = ds.observations[OBSERVATION_COLUMNS].copy()
    table['is_cold'] = table['is_cold'].astype(np.int64)
    return table.to_csv(index=False, lineterminator='\n')


def markets_to_csv(ds: PanelDataset) -> str:
    return ds.markets[MARKET_COLUMNS].to_csv(index=False, lineterminator='\n')


def write_panel(ds: PanelDataset, csv_path: PathLike, markets_path: PathLike) -> None:
    Path(csv_path).write_text(panel_to_csv(ds), encoding='utf-8', newline='')
    Path(markets_path).write_text(markets_to_csv(ds), encoding='utf-8', newline='')


def compute_shares(ds: PanelDataset) -> PanelDataset:
    """Add quantity and revenue shares to every observation and outside shares to every market.

    Added observation columns are ``share``, ``within_share`` and ``group_share`` (volume over potential market
    size) and ``rev_share``, ``within_rev_share`` and ``group_rev_share`` (revenue over expenditure size). Markets
    gain ``outside_share`` and ``outside_rev_share``; a market with no observations has outside shares of one.
    """
    obs = ds.observations.copy()
    mkts = ds.markets.copy()
    market = obs['market'].to_numpy()
    n_markets = len(mkts)
    group_codes = _market_group_codes(obs)
    revenue = obs['price'].to_numpy() * obs['volume'].to_numpy()
    for prefix, numerator, denominator in [
            ('', obs['volume'].to_numpy(dtype=float), obs['market_size'].to_numpy()),
            ('rev_', revenue, obs['expenditure_size'].to_numpy())]:
        share = numerator / denominator
        group_total = np.bincount(group_codes, weights=share)
        if np.any(group_total == 0):
            bad = obs.loc[group_total[group_codes] == 0, ['group_id', 'region_id', 'period']].drop_duplicates()
            raise ZeroGroupShare(f"Groups with zero total {prefix}share:\n{bad.to_string(index=False)}")
        obs[f'{prefix}share'] = share
        obs[f'within_{prefix}share'] = share / group_total[group_codes]
        obs[f'group_{prefix}share'] = group_total[group_codes]
        mkts[f'outside_{prefix}share'] = 1.0 - np.bincount(market, weights=share, minlength=n_markets)
    return PanelDataset(obs, mkts)


def market_group_codes(observations: pd.DataFrame) -> np.ndarray:
    """Integer code of each row's (market, group) cell."""
    return _market_group_codes(observations)


def _market_group_codes(obs: pd.DataFrame) -> np.ndarray:
    return obs.groupby(['market', 'group_id'], sort=True).ngroup().to_numpy()


def _read_csv(path: PathLike, required: List[str]) -> pd.DataFrame:
    dtypes = {c: str for c in _ID_COLUMNS}
    table = pd.read_csv(path, dtype=dtypes, keep_default_na=False, na_values=[''], float_precision='round_trip')
    missing = [c for c in required if c not in table.columns]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
    return table


def _parse_bool(values: pd.Series) -> pd.Series:
    if values.dtype == bool:
        return values
    mapping = {'1': True, '0': False, 'true': True, 'false': False, 'True': True, 'False': False}
    parsed = values.astype(str).map(mapping)
    if parsed.isna().any():
        bad = values[parsed.isna()].unique()[:5]
        raise DataError(f"is_cold must be 0/1 or true/false, got {list(bad)}")
    return parsed.astype(bool)


def _coerce_observations(observations: pd.DataFrame, products: Optional[pd.DataFrame]) -> pd.DataFrame:
    obs = observations.copy()
    if products is not None:
        missing = [c for c in PRODUCT_COLUMNS if c not in products.columns]
        if missing:
            raise MissingColumn(f"products table missing column(s) {', '.join(missing)}")
        products = products[PRODUCT_COLUMNS].astype({c: str for c in PRODUCT_COLUMNS[:-1]})
        unknown = ~obs['product_id'].astype(str).isin(products['product_id'])
        if unknown.any():
            rows = (np.flatnonzero(unknown.to_numpy()) + 1).tolist()[:10]
            ids = sorted(obs.loc[unknown, 'product_id'].astype(str).unique())[:10]
            raise OrphanProduct(f"Products {ids} are not in the products table (rows {rows})")
        obs = obs.drop(columns=[c for c in PRODUCT_COLUMNS[1:] if c in obs.columns])
        obs = obs.assign(product_id=obs['product_id'].astype(str)).merge(products, on='product_id', how='left')
    missing = [c for c in OBSERVATION_COLUMNS if c not in obs.columns]
    if missing:
        raise MissingColumn(f"observations missing column(s) {', '.join(missing)}")
    obs = obs[OBSERVATION_COLUMNS].copy()
    for column in _ID_COLUMNS:
        if obs[column].isna().any():
            raise DataError(f"Column {column} has empty values")
        obs[column] = obs[column].astype(str)
    obs['is_cold'] = _parse_bool(obs['is_cold'])
    obs['period'] = _as_int(obs['period'], 'period')
    for column in ['price', 'volume', 'adv_raw', 'news_raw']:
        obs[column] = pd.to_numeric(obs[column], errors='raise').astype(float)
        if not np.isfinite(obs[column]).all():
            raise DataError(f"Column {column} has non-finite values")
    if (obs['news_raw'] != np.round(obs['news_raw'])).any():
        raise DataError("news_raw must hold integer article counts")
    obs['news_raw'] = obs['news_raw'].astype(np.int64)
    return obs


def _coerce_markets(markets: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in MARKET_COLUMNS if c not in markets.columns]
    if missing:
        raise MissingColumn(f"markets missing column(s) {', '.join(missing)}")
    mkts = markets[MARKET_COLUMNS].copy()
    mkts['region_id'] = mkts['region_id'].astype(str)
    mkts['period'] = _as_int(mkts['period'], 'period')
    for column in ['population', 'size_unit', 'expenditure_size']:
        mkts[column] = pd.to_numeric(mkts[column], errors='raise').astype(float)
        if not (mkts[column] > 0).all():
            raise DataError(f"Market column {column} must be positive")
    return mkts


def _as_int(values: pd.Series, name: str) -> pd.Series:
    numeric = pd.to_numeric(values, errors='raise')
    if (numeric != np.round(numeric)).any():
        raise DataError(f"Column {name} must hold integers")
    return numeric.astype(np.int64)


def _validate(obs: pd.DataFrame, mkts: pd.DataFrame) -> None:
    duplicated = obs.duplicated(_OBS_KEY, keep=False)
    if duplicated.any():
        rows = (np.flatnonzero(duplicated.to_numpy()) + 1).tolist()[:10]
        raise DuplicateKey(f"Duplicate (product_id, region_id, period) in observation rows {rows}")
    duplicated = mkts.duplicated(_MARKET_KEY, keep=False)
    if duplicated.any():
        rows = (np.flatnonzero(duplicated.to_numpy()) + 1).tolist()[:10]
        raise DuplicateKey(f"Duplicate (region_id, period) in market rows {rows}")

    for column in PRODUCT_COLUMNS[1:]:
        counts = obs.groupby('product_id')[column].nunique()
        if (counts > 1).any():
            raise InconsistentSeries(f"Products {sorted(counts.index[counts > 1])[:10]} have several {column} values")
    for entity, column in [('firm_id', 'news_raw'), ('brand_id', 'adv_raw')]:
        counts = obs.groupby([entity, 'period'])[column].nunique()
        if (counts > 1).any():
            bad = counts.index[counts > 1][:5].tolist()
            raise InconsistentSeries(f"{column} differs across rows sharing ({entity}, period) for {bad}")

    for column in ['volume', 'adv_raw', 'news_raw']:
        negative = obs[column] < 0
        if negative.any():
            rows = (np.flatnonzero(negative.to_numpy()) + 1).tolist()[:10]
            raise NegativeInput(f"Negative {column} in observation rows {rows}")
    bad_price = (obs['price'] <= 0) & (obs['volume'] > 0)
    if bad_price.any():
        rows = (np.flatnonzero(bad_price.to_numpy()) + 1).tolist()[:10]
        raise DataError(f"Non-positive price with positive volume in observation rows {rows}")

    merged = obs[_MARKET_KEY].merge(mkts[_MARKET_KEY].assign(_known=True), on=_MARKET_KEY, how='left')
    orphan = merged['_known'].isna().to_numpy()
    if orphan.any():
        rows = (np.flatnonzero(orphan) + 1).tolist()[:10]
        raise OrphanProduct(f"Observation rows {rows} refer to markets with no market definition")

    totals = obs.assign(revenue=obs['price'] * obs['volume']).groupby(_MARKET_KEY)[['volume', 'revenue']].sum()
    sized = totals.join(mkts.set_index(_MARKET_KEY))
    over = sized['volume'] >= sized['population'] * sized['size_unit']
    if over.any():
        raise MarketSizeViolation(f"Total volume reaches potential market size in markets {over.index[over][:10].tolist()}")
    over = sized['revenue'] >= sized['expenditure_size']
    if over.any():
        raise MarketSizeViolation(f"Total revenue reaches expenditure size in markets {over.index[over][:10].tolist()}")


def summarize(ds: PanelDataset) -> pd.DataFrame:
    """Descriptive statistics of volume, revenue, price and share by product group and by firm."""
    obs = ds.observations
    if 'share' not in obs:
        obs = compute_shares(ds).observations
    obs = obs.assign(revenue=obs['price'] * obs['volume'], share_pct=100 * obs['share'])
    columns = ['volume', 'revenue', 'price', 'adv_raw', 'share_pct']
    frames = []
    for level in ['group_id', 'firm_id']:
        grouped = obs.groupby(level, sort=True)
        stats = grouped[columns].agg(['mean', 'std'])
        stats.columns = [f'{a}_{b}' for a, b in stats.columns]
        stats.insert(0, 'n_products', grouped['product_id'].nunique())
        stats.insert(0, 'n_obs', grouped.size())
        stats.index = pd.MultiIndex.from_product([[level.removesuffix('_id')], stats.index], names=['by', 'level'])
        frames.append(stats)
    return pd.concat(frames).reset_index()


def read_text_csv(text: str) -> pd.DataFrame:
    """Parse CSV text with the identifier columns kept as strings."""
    return pd.read_csv(io.StringIO(text), dtype={c: str for c in _ID_COLUMNS}, keep_default_na=False, na_values=[''],
                       float_precision='round_trip')
