"""Own- and cross-price elasticities for the nested logit and CENL models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .parallel import map_ordered
from .shares import MarketSnapshot, UtilityParams, market_snapshots, shares_from_utilities


@dataclass(frozen=True)
class ElasticityMatrix:
    """Elasticities ``matrix[j, k]`` of product ``j``'s quantity with respect to product ``k``'s price."""

    market: object
    matrix: np.ndarray
    product_ids: Sequence[str]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.matrix, index=list(self.product_ids), columns=list(self.product_ids))


def elasticities(snap: MarketSnapshot, params: UtilityParams, market: object = None) -> ElasticityMatrix:
    """Evaluate the closed-form elasticity matrix at the snapshot's mean utilities.

    Nested logit: ``alpha * p_k * s_k / s_j * (D1 / (1 - sigma) - sigma / (1 - sigma) * s_j|g * D2 - s_j)``.
    CENL uses revenue shares, drops ``p_k`` and subtracts ``D1``.
    """
    prices = np.asarray(snap.prices, dtype=float)
    if np.any(prices <= 0):
        raise DataError("Prices must be positive")
    result = shares_from_utilities(snap, params)
    s, within = result.shares, result.within
    if np.any(s <= 0):
        raise DataError("Shares must be positive")
    sigma = params.effective_sigma
    groups = np.asarray(snap.groups)
    own = np.eye(s.size)
    same = (groups[:, None] == groups[None, :]).astype(float)
    bracket = own / (1 - sigma) - sigma / (1 - sigma) * within[:, None] * same - s[:, None]
    ratio = s[None, :] / s[:, None]
    if params.model_kind == 'cenl':
        matrix = params.alpha * ratio * bracket - own
    else:
        matrix = params.alpha * prices[None, :] * ratio * bracket
    return ElasticityMatrix(market, matrix, list(snap.product_ids))


def observation_elasticities(
        frame: pd.DataFrame, params: UtilityParams, delta_column: str = 'delta_hat',
        threads: Optional[int] = 1) -> pd.DataFrame:
    """Own elasticity and mean same-group and other-group cross elasticities for every row of ``frame``.

    Cross means for row ``j`` average ``elasticity[j, k]`` over the other products ``k`` of the market in ``j``'s
    group (``cross_same``) and in other groups (``cross_other``); they are NaN when no such product exists.
    """
    def one_market(item):
        market, rows, snap = item
        matrix = elasticities(snap, params, market).matrix
        groups = np.asarray(snap.groups)
        same = groups[:, None] == groups[None, :]
        np.fill_diagonal(same, False)
        other = groups[:, None] != groups[None, :]
        with np.errstate(invalid='ignore', divide='ignore'):
            cross_same = np.where(same, matrix, 0).sum(axis=1) / same.sum(axis=1)
            cross_other = np.where(other, matrix, 0).sum(axis=1) / other.sum(axis=1)
        cross_same[same.sum(axis=1) == 0] = np.nan
        cross_other[other.sum(axis=1) == 0] = np.nan
        return rows, np.diag(matrix).copy(), cross_same, cross_other

    out = np.full((len(frame), 3), np.nan)
    for rows, own, cross_same, cross_other in map_ordered(
            one_market, market_snapshots(frame, delta_column, params), threads):
        out[rows] = np.column_stack([own, cross_same, cross_other])
    return pd.DataFrame(out, index=frame.index, columns=['own', 'cross_same', 'cross_other'])


def group_mean_elasticities(
        estimate, weighting: Literal['observation', 'share'] = 'observation',
        threads: Optional[int] = 1) -> pd.DataFrame:
    """Average own, same-group cross and other-group cross elasticities by product group.

    Rows are ``own``, ``cross_same`` and ``cross_other``; columns are the groups followed by ``All``. Cells
    without any defined elasticity are NaN. ``weighting='share'`` weights observations by their market share.
    """
    frame = estimate.data
    values = observation_elasticities(frame, estimate.params, threads=threads)
    if weighting == 'share':
        weights = frame['rev_share' if estimate.spec.model_kind == 'cenl' else 'share'].to_numpy()
    elif weighting == 'observation':
        weights = np.ones(len(frame))
    else:
        raise DataError(f"Unknown weighting {weighting!r}")
    groups = frame['group_id'].to_numpy()
    columns = {}
    for label in sorted(np.unique(groups)) + ['All']:
        mask = np.ones(len(frame), bool) if label == 'All' else groups == label
        column = {}
        for row in values.columns:
            v = values[row].to_numpy()[mask]
            w = weights[mask]
            defined = ~np.isnan(v)
            column[row] = np.average(v[defined], weights=w[defined]) if defined.any() else np.nan
        columns[label] = column
    table = pd.DataFrame(columns).loc[['own', 'cross_same', 'cross_other']]
    table.index.name = 'elasticity'
    return table
