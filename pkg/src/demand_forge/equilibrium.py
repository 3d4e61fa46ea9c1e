"""Marginal-cost recovery and Nash-Bertrand price equilibria for multi-product firms.

With ``q`` the quantity shares and ``J[j, k] = dq_j / dp_k``, firm first-order conditions stack to
``q + (Omega * J') (p - mc) = 0``, where ``Omega`` marks common ownership. Costs follow as
``mc = p + (Omega * J')^-1 q`` and equilibrium prices solve ``p = mc - (Omega * J(p)')^-1 q(p)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoConvergence, SingularBlock
from .shares import (
    MarketSnapshot, ShareResult, UtilityParams, quantity_shares, share_price_jacobian, shares_from_utilities
)

logger = logging.getLogger(__name__)


class NegativeCostWarning(UserWarning):
    pass


def ownership_matrix(firms) -> np.ndarray:
    firms = np.asarray(firms)
    return (firms[:, None] == firms[None, :]).astype(float)


def _foc_matrix(snap: MarketSnapshot, params: UtilityParams, ownership: np.ndarray, result: ShareResult):
    jacobian = share_price_jacobian(snap, params, result)
    return ownership * jacobian.T


def _check_blocks(matrix: np.ndarray, firms, cond_limit: float = 1e12) -> None:
    firms = np.asarray(firms)
    for firm in np.unique(firms):
        block_index = np.flatnonzero(firms == firm)
        block = matrix[np.ix_(block_index, block_index)]
        # rescale by the diagonal so products with tiny shares do not read as singular
        scale = np.sqrt(np.abs(np.diag(block)))
        if not np.all(np.isfinite(block)) or np.any(scale == 0):
            raise SingularBlock(f"First-order-condition block of firm {firm!r} is singular")
        if np.linalg.cond(block / scale[:, None] / scale[None, :]) > cond_limit:
            raise SingularBlock(f"First-order-condition block of firm {firm!r} is singular")


def markups(snap: MarketSnapshot, params: UtilityParams, ownership: Optional[np.ndarray] = None,
            result: Optional[ShareResult] = None) -> np.ndarray:
    """Price-cost margins ``-(Omega * J')^-1 q`` implied at the snapshot."""
    if ownership is None:
        ownership = snap.ownership
    if result is None:
        result = shares_from_utilities(snap, params)
    matrix = _foc_matrix(snap, params, ownership, result)
    _check_blocks(matrix, snap.firms)
    return -np.linalg.solve(matrix, quantity_shares(snap, params, result))


def recover_costs(snap: MarketSnapshot, params: UtilityParams, ownership: Optional[np.ndarray] = None) -> np.ndarray:
    """Marginal costs rationalizing the snapshot's prices as a Nash-Bertrand equilibrium.

    Negative costs are returned as computed, with a :class:`NegativeCostWarning`.
    """
    costs = np.asarray(snap.prices, dtype=float) - markups(snap, params, ownership)
    if np.any(costs < 0):
        warnings.warn(f"{int((costs < 0).sum())} recovered marginal costs are negative", NegativeCostWarning,
                      stacklevel=2)
    return costs


def foc_residual(snap: MarketSnapshot, params: UtilityParams, costs: np.ndarray,
                 ownership: Optional[np.ndarray] = None) -> float:
    """Maximum absolute violation of ``p - mc - markup(p) = 0``."""
    prices = np.asarray(snap.prices, dtype=float)
    return float(np.abs(prices - costs - markups(snap, params, ownership)).max())


def reprice(snap: MarketSnapshot, params: UtilityParams, prices: np.ndarray) -> MarketSnapshot:
    """Move a snapshot to new prices, shifting mean utilities through the price term only."""
    prices = np.asarray(prices, dtype=float)
    delta = snap.delta + params.price_term(prices) - params.price_term(snap.prices)
    return snap.with_delta(delta, prices)


@dataclass(frozen=True)
class BertrandSolution:
    prices: np.ndarray
    snapshot: MarketSnapshot
    shares: ShareResult
    iterations: int
    residual: float


def solve_bertrand(
        costs: np.ndarray, params: UtilityParams, snap: MarketSnapshot, ownership: Optional[np.ndarray] = None,
        initial: Optional[np.ndarray] = None, tol: float = 1e-10, max_iterations: int = 10_000,
        damping: float = 1.0) -> BertrandSolution:
    """Solve for equilibrium prices by damped fixed-point iteration on ``p = mc + markup(p)``.

    ``snap`` fixes the mean utilities at its own prices; other prices move utilities through the price term.
    The damping factor halves whenever the step length grows. Iteration stops once both the step and the
    first-order-condition residual are below ``tol``.
    """
    costs = np.asarray(costs, dtype=float)
    if ownership is None:
        ownership = snap.ownership
    prices = np.array(snap.prices if initial is None else initial, dtype=float)
    last_step = np.inf
    anchor, anchor_step = None, None
    for iteration in range(1, max_iterations + 1):
        try:
            target = costs + markups(reprice(snap, params, prices), params, ownership)
        except SingularBlock:
            target = None
        if target is None or not np.all(np.isfinite(target)):
            # overshot into a degenerate region; retake the last good step at half the length
            if anchor is None or damping < 1e-12:
                raise NoConvergence("Bertrand iteration produced non-finite prices", np.inf)
            damping /= 2
            prices = anchor + damping * anchor_step
            continue
        step = target - prices
        size = float(np.abs(step).max())
        if size < tol:
            break
        if size > last_step:
            damping /= 2
        last_step = size
        anchor, anchor_step = prices, step
        prices = prices + damping * step
        if params.model_kind == 'cenl':
            prices = np.maximum(prices, 1e-12)
    else:
        raise NoConvergence(f"Bertrand iteration did not converge in {max_iterations} iterations; last step {size:.3e}",
                            size)
    current = reprice(snap, params, prices)
    residual = foc_residual(current, params, costs, ownership)
    if residual >= tol:
        raise NoConvergence(f"First-order-condition residual {residual:.3e} exceeds {tol:.0e}", residual)
    return BertrandSolution(prices, current, shares_from_utilities(current, params), iteration, residual)


def regulated_prices(prices: np.ndarray) -> np.ndarray:
    """Counterfactual prices under price regulation: the observed prices, unchanged."""
    return np.array(prices, copy=True)
