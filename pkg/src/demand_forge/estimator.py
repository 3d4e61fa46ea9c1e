"""Linear (nested) logit demand estimation with instruments, absorbed fixed effects and two-step GMM.

The estimating equation is ``log(s / s0) = alpha * price + sigma * log(s_within) + beta1 * imgscore
+ beta2 * cumadv + fixed effects + xi``. Under CENL, shares are revenue shares and price enters in logs. The
first step is 2SLS; the second step is GMM weighted by the inverse of the market-clustered moment covariance at
the first-step residuals, and its covariance ``(Q' S^-1 Q)^-1`` (with ``Q = Z'X``) supplies the clustered
standard errors. No finite-sample correction is applied.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse

from .absorption import Absorber
from .errors import DataError, DomainError, RankDeficient
from .instruments import build_instruments
from .panel import PanelDataset, compute_shares
from .shares import UtilityParams

logger = logging.getLogger(__name__)

FixedEffects = Literal['product_time_region', 'product_market']


class WeakIdentificationWarning(UserWarning):
    """A Sanderson-Windmeijer first-stage F statistic is below 10."""


class SigmaRangeWarning(UserWarning):
    """The estimated nesting parameter lies outside [0, 1)."""


@dataclass(frozen=True)
class DemandSpec:
    """Demand model configuration.

    Attributes
    ----------
    model_kind : `str`
        ``'logit'``, ``'nested_logit'`` or ``'cenl'``.
    fixed_effects : `str`
        ``'product_time_region'`` for separate product, period and region dummies, or ``'product_market'`` for
        product and market dummies.
    cold_month : `bool`
        Whether to add cold-product by calendar-month cells.
    endogenous_adv : `bool`
        Treat ``cumadv`` as endogenous and instrument it with ``rival_entry``.
    instruments : `tuple of str, optional`
        Excluded instruments. By default the Hausman price instrument plus ``rival_count`` for nested models and
        ``rival_entry`` when advertising is endogenous.
    weighting : `str`
        ``'clustered'`` for the efficient two-step weight, ``'unadjusted'`` for a homoskedastic weight under
        which the second step reproduces 2SLS.
    """

    model_kind: Literal['logit', 'nested_logit', 'cenl'] = 'nested_logit'
    fixed_effects: FixedEffects = 'product_time_region'
    cold_month: bool = True
    endogenous_adv: bool = False
    instruments: Optional[Tuple[str, ...]] = None
    weighting: Literal['clustered', 'unadjusted'] = 'clustered'
    fe_tol: float = 1e-10
    fe_max_sweeps: int = 500

    def __post_init__(self) -> None:
        if self.model_kind not in ('logit', 'nested_logit', 'cenl'):
            raise DataError(f"Unknown model kind {self.model_kind!r}")
        if self.fixed_effects not in ('product_time_region', 'product_market'):
            raise DataError(f"Unknown fixed-effect scheme {self.fixed_effects!r}")
        if self.weighting not in ('clustered', 'unadjusted'):
            raise DataError(f"Unknown weighting {self.weighting!r}")
        if len(self.instrument_names) < len(self.endogenous):
            raise DataError("Fewer instruments than endogenous regressors")

    @property
    def price_name(self) -> str:
        return 'log_price' if self.model_kind == 'cenl' else 'price'

    @property
    def nest_name(self) -> Optional[str]:
        return {'logit': None, 'nested_logit': 'ln_within_share', 'cenl': 'ln_within_rev_share'}[self.model_kind]

    @property
    def endogenous(self) -> List[str]:
        names = [self.price_name] + ([self.nest_name] if self.nest_name else [])
        return names + (['cumadv'] if self.endogenous_adv else [])

    @property
    def exogenous(self) -> List[str]:
        return ['imgscore'] + ([] if self.endogenous_adv else ['cumadv'])

    @property
    def regressors(self) -> List[str]:
        return self.endogenous + self.exogenous

    @property
    def instrument_names(self) -> Tuple[str, ...]:
        if self.instruments is not None:
            return tuple(self.instruments)
        names = ['hausman_log_price' if self.model_kind == 'cenl' else 'hausman_price']
        if self.nest_name:
            names.append('rival_count')
        if self.endogenous_adv:
            names.append('rival_entry')
        return tuple(names)


PARAMETER_NAMES = {
    'price': 'alpha', 'log_price': 'alpha', 'ln_within_share': 'sigma', 'ln_within_rev_share': 'sigma',
    'imgscore': 'beta1', 'cumadv': 'beta2'
}


@dataclass
class EstimationData:
    """Estimation sample after instrument construction, row drops and fixed-effect absorption."""

    frame: pd.DataFrame
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    clusters: np.ndarray
    regressors: List[str]
    instruments: List[str]
    n_dropped_zero: int = 0
    n_dropped_hausman: int = 0
    sweeps: int = 0


@dataclass
class DemandEstimate:
    """Fitted demand model.

    Attributes
    ----------
    coefficients : `Series`
        Two-step GMM estimates indexed by regressor name.
    covariance : `DataFrame`
        Market-clustered covariance of the two-step estimates.
    first_step : `Series`
        2SLS estimates.
    sw_f : `dict`
        Sanderson-Windmeijer first-stage F statistic per endogenous regressor.
    data : `DataFrame`
        Estimation sample with the fitted mean utility ``delta_hat`` and the structural residual ``xi_hat``.
    """

    spec: DemandSpec
    coefficients: pd.Series
    covariance: pd.DataFrame
    first_step: pd.Series
    first_step_covariance: pd.DataFrame
    sw_f: Dict[str, float]
    data: pd.DataFrame
    n_obs: int
    n_clusters: int
    foc_residual: float
    sigma_out_of_range: bool = False
    n_dropped_zero: int = 0
    n_dropped_hausman: int = 0

    @property
    def se(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.covariance.to_numpy())), index=self.coefficients.index)

    @property
    def residuals(self) -> np.ndarray:
        return self.data['xi_hat'].to_numpy()

    @property
    def params(self) -> UtilityParams:
        if self.sigma_out_of_range:
            raise DomainError(f"Estimated nesting parameter {self.coefficients[self.spec.nest_name]:.4f} is outside [0, 1)")
        values = {PARAMETER_NAMES[k]: float(v) for k, v in self.coefficients.items()}
        return UtilityParams(
            alpha=values['alpha'], sigma=values.get('sigma', 0.0), beta1=values['beta1'], beta2=values['beta2'],
            model_kind=self.spec.model_kind
        )

    def table(self) -> pd.DataFrame:
        """Coefficient table with columns ``name``, ``parameter``, ``estimate``, ``se`` and ``sw_f``."""
        return pd.DataFrame({
            'name': self.coefficients.index,
            'parameter': [PARAMETER_NAMES[n] for n in self.coefficients.index],
            'estimate': self.coefficients.to_numpy(),
            'se': self.se.to_numpy(),
            'sw_f': [self.sw_f.get(n, np.nan) for n in self.coefficients.index],
        })

    def with_coefficients(self, **values: float) -> 'DemandEstimate':
        """Copy with some coefficients replaced by parameter name (``alpha``, ``sigma``, ``beta1``, ``beta2``).

        ``delta_hat`` is kept, so only the channels the caller perturbs afterwards respond to the new values.
        """
        coefficients = self.coefficients.copy()
        for name, value in values.items():
            matches = [k for k in coefficients.index if PARAMETER_NAMES[k] == name]
            if not matches:
                raise KeyError(name)
            coefficients[matches[0]] = value
        return replace(self, coefficients=coefficients)


def fe_factors(frame: pd.DataFrame, spec: DemandSpec) -> List[np.ndarray]:
    """Label arrays of the fixed-effect dimensions in ``spec``."""
    if spec.fixed_effects == 'product_time_region':
        factors = [frame['product_id'].to_numpy(), frame['period'].to_numpy(), frame['region_id'].to_numpy()]
    else:
        factors = [frame['product_id'].to_numpy(), frame['market'].to_numpy()]
    if spec.cold_month:
        month = frame['period'].to_numpy() % 12 + 1
        factors.append(np.where(frame['is_cold'].to_numpy(dtype=bool), month, 0))
    return factors


def prepare(ds: PanelDataset, spec: DemandSpec) -> EstimationData:
    """Build the regression arrays for ``spec`` from a dataset carrying image and advertising scores."""
    obs = ds.observations
    if 'imgscore' not in obs or 'cumadv' not in obs:
        raise DataError("Attach imgscore and cumadv (attach_scores) before estimating")
    if 'share' not in obs:
        ds = compute_shares(ds)
        obs = ds.observations
    obs = obs.merge(ds.markets[['region_id', 'period', 'outside_share', 'outside_rev_share']],
                    on=['region_id', 'period'], how='left')

    frame = build_instruments(obs, spec.instrument_names, drop_undefined=True)
    n_dropped_hausman = len(obs) - len(frame)
    positive = frame['volume'] > 0
    n_dropped_zero = int((~positive).sum())
    if n_dropped_zero:
        logger.info("Dropped %d zero-volume observations", n_dropped_zero)
    frame = frame[positive].copy()
    if frame.empty:
        raise DataError("No observations left to estimate on")

    frame['log_price'] = np.log(frame['price'])
    frame['ln_within_share'] = np.log(frame['within_share'])
    frame['ln_within_rev_share'] = np.log(frame['within_rev_share'])
    if spec.model_kind == 'cenl':
        y = np.log(frame['rev_share'].to_numpy()) - np.log(frame['outside_rev_share'].to_numpy())
    else:
        y = np.log(frame['share'].to_numpy()) - np.log(frame['outside_share'].to_numpy())
    frame['y'] = y

    regressors = spec.regressors
    instruments = list(spec.instrument_names) + spec.exogenous
    X = frame[regressors].to_numpy(dtype=float)
    Z = frame[instruments].to_numpy(dtype=float)
    absorber = Absorber(fe_factors(frame, spec), spec.fe_tol, spec.fe_max_sweeps)
    demeaned = absorber.residualize(np.column_stack([y, X, Z]))
    k = X.shape[1]
    frame = frame.reset_index(drop=True)
    return EstimationData(
        frame, demeaned[:, 0], demeaned[:, 1:1 + k], demeaned[:, 1 + k:],
        frame['market'].to_numpy(), regressors, instruments, n_dropped_zero, n_dropped_hausman, absorber.sweeps
    )


def cluster_sums(values: np.ndarray, clusters: np.ndarray) -> np.ndarray:
    """Sum the rows of ``values`` within each cluster."""
    codes = np.unique(clusters, return_inverse=True)[1].ravel()
    indicator = scipy.sparse.csr_matrix(
        (np.ones(codes.size), (codes, np.arange(codes.size))), shape=(codes.max() + 1, codes.size)
    )
    return np.asarray(indicator @ values)


def _check_rank(matrix: np.ndarray, names: Sequence[str], label: str) -> None:
    scale = np.sqrt((matrix ** 2).sum(axis=0))
    if np.any(scale == 0):
        zero = [n for n, s in zip(names, scale) if s == 0]
        raise RankDeficient(f"{label} columns {zero} vanish after absorbing fixed effects")
    rank = np.linalg.matrix_rank(matrix / scale)
    if rank < matrix.shape[1]:
        raise RankDeficient(f"{label} matrix {list(names)} has rank {rank} < {matrix.shape[1]}")


def two_sls(y: np.ndarray, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """2SLS coefficients ``(X' Pz X)^-1 X' Pz y``."""
    fitted = Z @ np.linalg.lstsq(Z, X, rcond=None)[0]
    return np.linalg.solve(fitted.T @ X, fitted.T @ y)


def gmm_step(y: np.ndarray, X: np.ndarray, Z: np.ndarray, S: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Linear GMM with weight ``S^-1``; return coefficients and ``(Q' S^-1 Q)^-1``."""
    Q = Z.T @ X
    factor = scipy.linalg.cho_factor(S)
    SinvQ = scipy.linalg.cho_solve(factor, Q)
    bread = np.linalg.inv(Q.T @ SinvQ)
    beta = bread @ (SinvQ.T @ (Z.T @ y))
    return beta, (bread + bread.T) / 2


def clustered_moment_covariance(Z: np.ndarray, u: np.ndarray, clusters: np.ndarray) -> np.ndarray:
    scores = cluster_sums(Z * u[:, None], clusters)
    return scores.T @ scores


def ols_clustered(y: np.ndarray, X: np.ndarray, clusters: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """OLS coefficients and their market-clustered sandwich covariance."""
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ (X.T @ y)
    meat = clustered_moment_covariance(X, y - X @ beta, clusters)
    covariance = XtX_inv @ meat @ XtX_inv
    return beta, (covariance + covariance.T) / 2


def sw_first_stage_f(data: EstimationData, n_endogenous: int) -> Dict[str, float]:
    """Sanderson-Windmeijer conditional first-stage F statistics with clustered variance.

    For each endogenous regressor, the others are partialled out by a 2SLS regression of it on them (plus the
    exogenous regressors); the residual is then regressed on all instruments and the excluded instruments are
    tested jointly, with the Wald statistic divided by ``L - K + 1``.
    """
    n_excluded = data.Z.shape[1] - (data.X.shape[1] - n_endogenous)
    stats = {}
    for j in range(n_endogenous):
        target = data.X[:, j]
        others = np.delete(data.X, j, axis=1)
        coefficients = two_sls(target, others, data.Z)
        residual = target - others @ coefficients
        pi, covariance = ols_clustered(residual, data.Z, data.clusters)
        pi, covariance = pi[:n_excluded], covariance[:n_excluded, :n_excluded]
        wald = float(pi @ np.linalg.solve(covariance, pi))
        stats[data.regressors[j]] = wald / (n_excluded - n_endogenous + 1)
    return stats


def fit(data: EstimationData, spec: DemandSpec) -> DemandEstimate:
    """Run 2SLS and two-step GMM on prepared arrays."""
    y, X, Z, clusters = data.y, data.X, data.Z, data.clusters
    _check_rank(X, data.regressors, "Regressor")
    _check_rank(Z, data.instruments, "Instrument")
    _check_rank(Z.T @ X, data.regressors, "Cross-moment")
    n = y.size
    n_endogenous = len(spec.endogenous)

    beta1 = two_sls(y, X, Z)
    u1 = y - X @ beta1
    fitted = Z @ np.linalg.lstsq(Z, X, rcond=None)[0]
    bread = np.linalg.inv(fitted.T @ X)
    cov1 = bread @ clustered_moment_covariance(fitted, u1, clusters) @ bread

    if spec.weighting == 'clustered':
        S = clustered_moment_covariance(Z, u1, clusters)
    else:
        S = (u1 @ u1 / n) * (Z.T @ Z)
    try:
        beta2, cov2 = gmm_step(y, X, Z, S)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RankDeficient(f"Moment covariance is singular: {exc}") from exc
    u2 = y - X @ beta2
    moments = Z.T @ u2
    weighted = (Z.T @ X).T @ scipy.linalg.solve(S, moments, assume_a='pos')
    scale = np.abs((Z.T @ X).T @ scipy.linalg.solve(S, Z.T @ y, assume_a='pos')).max()
    foc_residual = float(np.abs(weighted).max() / max(scale, 1e-300))

    names = data.regressors
    coefficients = pd.Series(beta2, index=names)
    sw_f = sw_first_stage_f(data, n_endogenous)
    weak = {k: v for k, v in sw_f.items() if v < 10}
    if weak:
        warnings.warn(f"Weak identification: SW F below 10 for {weak}", WeakIdentificationWarning, stacklevel=2)

    sigma_out = False
    if spec.nest_name is not None:
        sigma = coefficients[spec.nest_name]
        sigma_out = not 0 <= sigma < 1
        if sigma_out:
            warnings.warn(f"Estimated sigma {sigma:.4f} is outside [0, 1)", SigmaRangeWarning, stacklevel=2)

    frame = data.frame.copy()
    nest = 0.0 if spec.nest_name is None else coefficients[spec.nest_name] * frame[spec.nest_name].to_numpy()
    frame['delta_hat'] = frame['y'].to_numpy() - nest
    frame['xi_hat'] = u2
    return DemandEstimate(
        spec=spec, coefficients=coefficients, covariance=pd.DataFrame(cov2, index=names, columns=names),
        first_step=pd.Series(beta1, index=names), first_step_covariance=pd.DataFrame(cov1, index=names, columns=names),
        sw_f=sw_f, data=frame, n_obs=n, n_clusters=int(np.unique(clusters).size), foc_residual=foc_residual,
        sigma_out_of_range=sigma_out, n_dropped_zero=data.n_dropped_zero, n_dropped_hausman=data.n_dropped_hausman
    )


def estimate(ds: PanelDataset, spec: DemandSpec = DemandSpec()) -> DemandEstimate:
    """Estimate the demand model in ``spec`` on a dataset with attached scores."""
    return fit(prepare(ds, spec), spec)


def first_stage_report(ds: PanelDataset, spec: DemandSpec = DemandSpec(), data: Optional[EstimationData] = None) -> pd.DataFrame:
    """OLS of each endogenous regressor on all instruments after absorbing fixed effects.

    Returns a long table with columns ``endogenous``, ``variable``, ``estimate``, ``se`` and ``t``.
    """
    if data is None:
        data = prepare(ds, spec)
    _check_rank(data.Z, data.instruments, "Instrument")
    rows = []
    for j, name in enumerate(spec.endogenous):
        beta, covariance = ols_clustered(data.X[:, j], data.Z, data.clusters)
        se = np.sqrt(np.diag(covariance))
        for variable, b, s in zip(data.instruments, beta, se):
            rows.append({'endogenous': name, 'variable': variable, 'estimate': b, 'se': s, 't': b / s})
    return pd.DataFrame(rows)
