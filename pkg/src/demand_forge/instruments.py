"""Instrument construction for price, within-group share and advertising."""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from .errors import HausmanUndefined

logger = logging.getLogger(__name__)

INSTRUMENTS = ('hausman_price', 'hausman_log_price', 'rival_count', 'rival_entry')


def hausman_price(obs: pd.DataFrame, log: bool = False) -> pd.Series:
    """Mean price of the same product in the other regions in the same period.

    NaN where the product is sold in a single region that period. With ``log=True`` the mean is taken over log
    prices.
    """
    price = np.log(obs['price']) if log else obs['price']
    grouped = price.groupby([obs['product_id'], obs['period']])
    total = grouped.transform('sum')
    count = grouped.transform('count')
    others = (total - price) / (count - 1)
    return others.where(count > 1)


def rival_count(obs: pd.DataFrame) -> pd.Series:
    """Number of same-group products in the market owned by other firms."""
    in_group = obs.groupby(['market', 'group_id'])['product_id'].transform('count')
    own = obs.groupby(['market', 'group_id', 'firm_id'])['product_id'].transform('count')
    return (in_group - own).astype(float)


def rival_entry(obs: pd.DataFrame) -> pd.Series:
    """Number of products launched nationally this period by other firms.

    A product is launched in the first period it appears anywhere in the panel. Products present in the first
    sample period are not counted as launches.
    """
    first = obs.groupby('product_id')['period'].min()
    launches = first[first > obs['period'].min()].rename('launch').reset_index()
    launches = launches.merge(obs.drop_duplicates('product_id')[['product_id', 'firm_id']], on='product_id')
    total = launches.groupby('launch').size()
    own = launches.groupby(['launch', 'firm_id']).size()
    total_here = obs['period'].map(total).fillna(0).to_numpy()
    own_index = pd.MultiIndex.from_arrays([obs['period'], obs['firm_id']])
    own_here = own.reindex(own_index).fillna(0).to_numpy()
    return pd.Series(total_here - own_here, index=obs.index, dtype=float)


def build_instruments(obs: pd.DataFrame, names=INSTRUMENTS, drop_undefined: bool = True) -> pd.DataFrame:
    """Add the requested instrument columns to an observation frame.

    Rows whose Hausman instrument is undefined are dropped (and counted in the log) when ``drop_undefined`` is
    true; :class:`HausmanUndefined` is raised if that leaves nothing.
    """
    out = obs.copy()
    for name in names:
        if name == 'hausman_price':
            out[name] = hausman_price(obs)
        elif name == 'hausman_log_price':
            out[name] = hausman_price(obs, log=True)
        elif name == 'rival_count':
            out[name] = rival_count(obs)
        elif name == 'rival_entry':
            out[name] = rival_entry(obs)
        else:
            raise ValueError(f"Unknown instrument {name!r}")
    hausman = [n for n in names if n.startswith('hausman')]
    if hausman and drop_undefined:
        undefined = out[hausman].isna().any(axis=1)
        if undefined.all():
            raise HausmanUndefined("Every product is observed in a single region; the Hausman instrument is undefined")
        if undefined.any():
            logger.info("Dropped %d observations with an undefined Hausman instrument", int(undefined.sum()))
            out = out[~undefined]
    return out
