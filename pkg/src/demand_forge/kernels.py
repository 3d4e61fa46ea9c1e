"""Decay kernels for firm-level image scores and brand-level cumulative advertising."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np
import pandas as pd

from .errors import InsufficientHistory, InvalidKernel, NegativeInput
from .panel import PanelDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelSpec:
    """Lag weights ``(1 - delta) ** n`` (geometric) or ``1 - n * delta`` (linear) for ``n = 0, ..., horizon_k``."""

    kind: Literal['geometric', 'linear'] = 'geometric'
    delta: float = 0.4
    horizon_k: int = 6

    def __post_init__(self) -> None:
        if self.kind not in ('geometric', 'linear'):
            raise InvalidKernel(f"Unknown kernel kind {self.kind!r}")
        if int(self.horizon_k) != self.horizon_k or self.horizon_k < 0:
            raise InvalidKernel(f"horizon_k must be a non-negative integer, got {self.horizon_k}")
        if not 0 <= self.delta <= 1:
            raise InvalidKernel(f"delta must lie in [0, 1], got {self.delta}")
        if self.kind == 'linear' and self.horizon_k * self.delta >= 1:
            raise InvalidKernel(f"linear kernel needs horizon_k * delta < 1, got {self.horizon_k * self.delta}")

    @property
    def weights(self) -> np.ndarray:
        lags = np.arange(self.horizon_k + 1)
        if self.kind == 'geometric':
            return (1 - self.delta) ** lags
        return 1 - lags * self.delta


def accumulate(raw: Union[Sequence[float], np.ndarray, pd.Series], spec: KernelSpec, strict: bool = False):
    """Apply the lag kernel to a series given in chronological order.

    With ``strict=False`` the first ``horizon_k`` values sum over the lags that exist; with ``strict=True`` they
    are NaN. A :class:`~pandas.Series` keeps its index, anything else comes back as an array.
    """
    values = np.asarray(raw, dtype=float)
    if values.ndim != 1:
        raise ValueError("raw must be one-dimensional")
    if np.any(values < 0):
        raise NegativeInput("Decay kernels take non-negative inputs")
    weights = spec.weights
    scores = np.convolve(values, weights)[:len(values)]
    if strict:
        scores[:min(spec.horizon_k, len(values))] = np.nan
    if isinstance(raw, pd.Series):
        return pd.Series(scores, index=raw.index, name=raw.name)
    return scores


def entity_scores(
        table: pd.DataFrame, entity: str, value: str, spec: KernelSpec, first_period: int, last_period: int,
        strict: bool = False) -> pd.DataFrame:
    """Accumulate ``value`` per ``entity`` over a complete run of periods.

    Periods with no row for an entity count as zero. Returns a frame with columns ``entity``, ``period`` and
    ``score``.
    """
    raw = table.drop_duplicates([entity, 'period']).pivot(index='period', columns=entity, values=value)
    periods = np.arange(first_period, last_period + 1)
    raw = raw.reindex(periods).fillna(0.0)
    weights = spec.weights
    padded = raw.to_numpy(dtype=float)
    scores = np.zeros_like(padded)
    for n, weight in enumerate(weights):
        if n >= len(periods):
            break
        scores[n:] += weight * padded[:len(periods) - n]
    if strict:
        scores[:spec.horizon_k] = np.nan
    result = pd.DataFrame(scores, index=periods, columns=raw.columns)
    result.index.name = 'period'
    return result.stack(future_stack=True).rename('score').reset_index()


def attach_scores(
        ds: PanelDataset, img_spec: KernelSpec = KernelSpec(), adv_spec: KernelSpec = KernelSpec(),
        image_divisor: float = 100.0, adv_divisor: float = 1e10, strict: bool = False) -> PanelDataset:
    """Attach the firm's image score and the brand's cumulative advertising to every observation.

    Scores are divided by ``image_divisor`` and ``adv_divisor`` before being stored in the ``imgscore`` and
    ``cumadv`` columns. In strict mode, observations in the first ``horizon_k`` periods of the sample (for either
    kernel) are dropped; :class:`InsufficientHistory` is raised if nothing is left.
    """
    obs = ds.observations
    first, last = int(obs['period'].min()), int(obs['period'].max())
    image = entity_scores(obs, 'firm_id', 'news_raw', img_spec, first, last, strict)
    adv = entity_scores(obs, 'brand_id', 'adv_raw', adv_spec, first, last, strict)
    image = image.rename(columns={'score': 'imgscore'})
    adv = adv.rename(columns={'score': 'cumadv'})
    image['imgscore'] /= image_divisor
    adv['cumadv'] /= adv_divisor
    out = obs.drop(columns=[c for c in ('imgscore', 'cumadv') if c in obs.columns])
    out = out.merge(image, on=['firm_id', 'period'], how='left').merge(adv, on=['brand_id', 'period'], how='left')
    if strict:
        keep = out['imgscore'].notna() & out['cumadv'].notna()
        dropped = int((~keep).sum())
        if keep.sum() == 0:
            raise InsufficientHistory("No period has the full lag window in strict mode")
        if dropped:
            logger.info("Strict kernel window dropped %d observations", dropped)
        out = out[keep]
    return ds.with_observations(out)
