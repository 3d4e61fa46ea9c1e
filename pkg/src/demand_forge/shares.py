"""Nested-logit and CENL market shares, their inversion, and share-price Jacobians.

All share computations run on stacked vectors: every product row carries an integer market code and an integer
group code, so a whole panel is evaluated in one call. The single-market helpers wrap the same routines.

Under CENL the utilities are evaluated exactly as in the nested logit, but the resulting shares are revenue
shares and price enters the mean utility as ``alpha * log(price)``. Quantities are then proportional to
``revenue_share / price``; :func:`quantity_shares` returns that quantity measure so that equilibrium and
elasticity code can treat both models alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Sequence

import numpy as np

from .errors import DataError, DomainError, NumericOverflow

SIGMA_CEILING = 1 - 1e-6

ModelKind = Literal['logit', 'nested_logit', 'cenl']


@dataclass(frozen=True)
class UtilityParams:
    """Demand parameters.

    ``gamma`` collects any further linear coefficients by name; fixed effects are absorbed during estimation and
    are not stored here.
    """

    alpha: float
    sigma: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    gamma: Dict[str, float] = field(default_factory=dict)
    model_kind: ModelKind = 'nested_logit'

    def __post_init__(self) -> None:
        if self.model_kind not in ('logit', 'nested_logit', 'cenl'):
            raise DataError(f"Unknown model kind {self.model_kind!r}")
        if not 0 <= self.sigma <= 1:
            raise DomainError(f"Nesting parameter must lie in [0, 1), got {self.sigma}")
        if self.model_kind == 'logit' and self.sigma != 0:
            raise DataError("A logit model has sigma = 0")

    @property
    def effective_sigma(self) -> float:
        """Nesting parameter used for evaluation, kept strictly below one."""
        return min(self.sigma, SIGMA_CEILING)

    def price_term(self, prices: np.ndarray) -> np.ndarray:
        """Contribution of price to mean utility."""
        prices = np.asarray(prices, dtype=float)
        return self.alpha * (np.log(prices) if self.model_kind == 'cenl' else prices)


@dataclass(frozen=True)
class MarketSnapshot:
    """Vectors describing one market."""

    product_ids: Sequence[str]
    prices: np.ndarray
    delta: np.ndarray
    groups: Sequence[str]
    firms: Sequence[str]
    market_size: float = 1.0

    def __post_init__(self) -> None:
        n = len(self.product_ids)
        for name in ('prices', 'delta', 'groups', 'firms'):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if not np.all(np.isfinite(self.delta)):
            raise DataError("Mean utilities must be finite")

    @property
    def group_codes(self) -> np.ndarray:
        return np.unique(np.asarray(self.groups), return_inverse=True)[1].ravel()

    @property
    def ownership(self) -> np.ndarray:
        firms = np.asarray(self.firms)
        return (firms[:, None] == firms[None, :]).astype(float)

    def with_delta(self, delta: np.ndarray, prices: Optional[np.ndarray] = None) -> 'MarketSnapshot':
        return MarketSnapshot(
            self.product_ids, self.prices if prices is None else np.asarray(prices, dtype=float),
            np.asarray(delta, dtype=float), self.groups, self.firms, self.market_size
        )


@dataclass(frozen=True)
class ShareResult:
    """Shares of a stacked set of products.

    ``shares``, ``within`` and ``group`` are per product; ``outside`` is per market.
    """

    shares: np.ndarray
    within: np.ndarray
    group: np.ndarray
    outside: np.ndarray


def cell_codes(markets: np.ndarray, groups: np.ndarray):
    """Code each product's (market, group) cell; return the codes and the market of each cell."""
    pairs = np.stack([np.asarray(markets, dtype=np.int64), np.asarray(groups, dtype=np.int64)], axis=1)
    unique, codes = np.unique(pairs, axis=0, return_inverse=True)
    return codes.ravel(), unique[:, 0]


def stacked_shares(
        delta: np.ndarray, groups: np.ndarray, sigma: float, markets: Optional[np.ndarray] = None,
        n_markets: Optional[int] = None) -> ShareResult:
    """Nested-logit shares for stacked products.

    Inclusive values are formed after subtracting the largest scaled utility in each nest, and group shares after
    subtracting the largest log inclusive term in each market, so utilities scaled by ``1 / (1 - sigma)`` with
    sigma close to one do not overflow.
    """
    delta = np.asarray(delta, dtype=float)
    if markets is None:
        markets = np.zeros(delta.size, dtype=np.int64)
    markets = np.asarray(markets, dtype=np.int64)
    if n_markets is None:
        n_markets = int(markets.max()) + 1 if markets.size else 0
    cells, cell_market = cell_codes(markets, groups)
    n_cells = cell_market.size
    scale = 1 - min(sigma, SIGMA_CEILING)

    scaled = delta / scale
    if not np.all(np.isfinite(scaled)):
        raise NumericOverflow("Scaled mean utilities are not finite")
    nest_max = np.full(n_cells, -np.inf)
    np.maximum.at(nest_max, cells, scaled)
    exp_scaled = np.exp(scaled - nest_max[cells])
    nest_sum = np.bincount(cells, weights=exp_scaled, minlength=n_cells)
    within = exp_scaled / nest_sum[cells]

    log_inclusive = scale * (nest_max + np.log(nest_sum))
    market_max = np.zeros(n_markets)
    np.maximum.at(market_max, cell_market, log_inclusive)
    exp_inclusive = np.exp(log_inclusive - market_max[cell_market])
    outside_term = np.exp(-market_max)
    denominator = outside_term + np.bincount(cell_market, weights=exp_inclusive, minlength=n_markets)
    group = exp_inclusive / denominator[cell_market]
    outside = outside_term / denominator
    return ShareResult(within * group[cells], within, group[cells], outside)


def shares_from_utilities(snap: MarketSnapshot, params: UtilityParams) -> ShareResult:
    """Shares of one market; for CENL these are revenue shares."""
    return stacked_shares(snap.delta, snap.group_codes, params.effective_sigma)


def invert_shares(shares, within_shares, outside_share, sigma: float) -> np.ndarray:
    """Mean utilities ``log(s / s0) - sigma * log(s_within)`` implied by observed shares."""
    shares = np.asarray(shares, dtype=float)
    within_shares = np.asarray(within_shares, dtype=float)
    outside_share = np.asarray(outside_share, dtype=float)
    if np.any((shares <= 0) | (shares >= 1)) or np.any((outside_share <= 0) | (outside_share >= 1)):
        raise DomainError("Shares must lie strictly between zero and one")
    if np.any((within_shares <= 0) | (within_shares > 1)):
        raise DomainError("Within-group shares must lie in (0, 1]")
    return np.log(shares) - np.log(outside_share) - sigma * np.log(within_shares)


def utility_jacobian(shares: np.ndarray, within: np.ndarray, groups: np.ndarray, sigma: float) -> np.ndarray:
    """Matrix of ``d s_j / d delta_k`` for one market."""
    shares = np.asarray(shares, dtype=float)
    within = np.asarray(within, dtype=float)
    groups = np.asarray(groups)
    sigma = min(sigma, SIGMA_CEILING)
    same = (groups[:, None] == groups[None, :]).astype(float)
    inner = np.eye(shares.size) / (1 - sigma) - sigma / (1 - sigma) * within[:, None] * same - shares[:, None]
    return shares[None, :] * inner


def quantity_shares(snap: MarketSnapshot, params: UtilityParams, result: Optional[ShareResult] = None) -> np.ndarray:
    """Quantity per unit of market size: the share itself, or ``revenue_share / price`` under CENL."""
    if result is None:
        result = shares_from_utilities(snap, params)
    if params.model_kind == 'cenl':
        return result.shares / np.asarray(snap.prices, dtype=float)
    return result.shares


def share_price_jacobian(
        snap: MarketSnapshot, params: UtilityParams, result: Optional[ShareResult] = None) -> np.ndarray:
    """Matrix of ``d q_j / d p_k`` where ``q`` is :func:`quantity_shares`."""
    if result is None:
        result = shares_from_utilities(snap, params)
    dsdu = utility_jacobian(result.shares, result.within, snap.group_codes, params.effective_sigma)
    prices = np.asarray(snap.prices, dtype=float)
    if params.model_kind == 'cenl':
        jacobian = params.alpha * dsdu / np.outer(prices, prices)
        return jacobian - np.diag(result.shares / prices ** 2)
    return params.alpha * dsdu



def market_snapshots(frame, delta_column: str = 'delta_hat', params: Optional[UtilityParams] = None):
    """Yield ``(market, row positions, snapshot)`` for each market in a stacked observation frame.

    Under CENL the snapshot's market size is the expenditure size; otherwise it is the potential market size.
    """
    size_column = 'expenditure_size' if params is not None and params.model_kind == 'cenl' else 'market_size'
    markets = frame['market'].to_numpy()
    order = np.argsort(markets, kind='stable')
    boundaries = np.flatnonzero(np.diff(markets[order])) + 1
    for rows in np.split(order, boundaries):
        if rows.size == 0:
            continue
        part = frame.iloc[rows]
        yield int(markets[rows[0]]), rows, MarketSnapshot(
            part['product_id'].to_numpy(), part['price'].to_numpy(dtype=float),
            part[delta_column].to_numpy(dtype=float), part['group_id'].to_numpy(), part['firm_id'].to_numpy(),
            float(part[size_column].iloc[0])
        )
