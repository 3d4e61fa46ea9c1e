"""Structural nested logit demand estimation, elasticities, Bertrand pricing and counterfactual simulation."""

__version__ = '0.1.0'

from .counterfactual import CounterfactualReport, ImageRule, Scenario, TauResult, ad_equivalence_tau, simulate
from .elasticity import ElasticityMatrix, elasticities, group_mean_elasticities, observation_elasticities
from .equilibrium import BertrandSolution, markups, ownership_matrix, recover_costs, solve_bertrand
from .errors import DataError, DemandForgeError, NumericalError
from .estimator import DemandEstimate, DemandSpec, estimate, first_stage_report
from .kernels import KernelSpec, accumulate, attach_scores
from .panel import PanelDataset, compute_shares, load_panel, summarize, write_panel
from .shares import MarketSnapshot, UtilityParams, invert_shares, shares_from_utilities
from .synth import SynthConfig, brute_force_bertrand, generate, simulate_panel

__all__ = [
    'BertrandSolution', 'CounterfactualReport', 'DataError', 'DemandEstimate', 'DemandForgeError', 'DemandSpec',
    'ElasticityMatrix', 'ImageRule', 'KernelSpec', 'MarketSnapshot', 'NumericalError', 'PanelDataset', 'Scenario',
    'SynthConfig', 'TauResult', 'UtilityParams', 'accumulate', 'ad_equivalence_tau', 'attach_scores',
    'brute_force_bertrand', 'compute_shares', 'elasticities', 'estimate', 'first_stage_report', 'generate',
    'group_mean_elasticities', 'invert_shares', 'load_panel', 'markups', 'observation_elasticities',
    'ownership_matrix', 'recover_costs', 'shares_from_utilities', 'simulate', 'simulate_panel', 'solve_bertrand',
    'summarize', 'write_panel',
]
