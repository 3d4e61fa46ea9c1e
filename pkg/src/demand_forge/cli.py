"""Command-line entry point: ``demand-forge <subcommand> [options]``.

Every subcommand reads an optional JSON config, writes its outputs to ``--output-dir`` and records a
``manifest.json`` with the config hash, input file hashes and seed. Config schema (all keys optional)::

    {
      "panel": "panel.csv", "markets": "markets.csv", "products": null,
      "seed": 0,
      "image_kernel": {"kind": "geometric", "delta": 0.4, "k": 6},
      "adv_kernel": {"kind": "geometric", "delta": 0.4, "k": 6},
      "image_divisor": 100, "adv_divisor": 1e10, "strict_window": false,
      "model": {"fixed_effects": "product_time_region", "cold_month": true, "endogenous_adv": false,
                "instruments": null, "weighting": "clustered"},
      "elasticity_weighting": "observation",
      "tau": {"tau_max": 2.0, "grid_step": 0.2, "grid_max": 1.0, "tol": 1e-8, "periods": null},
      "synth": {... SynthConfig fields ...}
    }

Command-line flags override the config. Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error;
failures print a JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .counterfactual import Scenario, ad_equivalence_tau, simulate
from .elasticity import group_mean_elasticities
from .equilibrium import foc_residual, recover_costs
from .errors import DataError, NumericalError
from .estimator import DemandSpec, estimate, first_stage_report
from .kernels import KernelSpec, attach_scores, entity_scores
from .panel import PanelDataset, load_panel, markets_to_csv, panel_to_csv, summarize
from .parallel import resolve_threads
from .shares import market_snapshots
from .synth import SynthConfig, generate

logger = logging.getLogger('demand_forge')

SUBCOMMANDS = {
    'simulate-data': "generate a synthetic panel from known parameters",
    'build-scores': "attach image scores and cumulative advertising",
    'estimate': "two-step GMM demand estimates with first-stage diagnostics",
    'elasticities': "own, within-group and cross-group price elasticities",
    'recover-costs': "marginal costs implied by Nash-Bertrand pricing",
    'counterfactual': "simulate an image scenario and report volume and revenue gaps",
    'ad-equivalence': "advertising multiplier that restores observed revenue",
    'summarize': "descriptive statistics of the panel",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _kernel(values: Optional[dict]) -> KernelSpec:
    values = dict(values or {})
    unknown = set(values) - {'kind', 'delta', 'k'}
    if unknown:
        raise UsageError(f"Unknown kernel keys {sorted(unknown)}")
    return KernelSpec(values.get('kind', 'geometric'), float(values.get('delta', 0.4)), int(values.get('k', 6)))


def _canonical(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(',', ':'), default=str)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Resolved options of one invocation plus the bookkeeping for its outputs."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config: dict = {}
        if args.config is not None:
            path = Path(args.config)
            if not path.is_file():
                raise UsageError(f"Config file {path} does not exist")
            try:
                self.config = json.loads(path.read_text(encoding='utf-8'))
            except json.JSONDecodeError as error:
                raise UsageError(f"Config file {path} is not valid JSON: {error}") from None
            if not isinstance(self.config, dict):
                raise UsageError("The config file must hold a JSON object")
        self.config_dir = Path(args.config).parent if args.config else Path('.')
        self.output_dir = Path(args.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.threads = resolve_threads(args.threads)
        self.inputs: Dict[str, str] = {}
        self.outputs: Dict[str, str] = {}

    def path_option(self, name: str) -> Optional[Path]:
        value = getattr(self.args, name, None)
        if value is not None:
            return Path(value)
        value = self.config.get(name)
        return None if value is None else self.config_dir / value

    def record_input(self, path: Path) -> None:
        if not path.is_file():
            raise UsageError(f"Input file {path} does not exist")
        self.inputs[path.name] = _sha256(path)

    def load(self) -> PanelDataset:
        panel, markets, products = (self.path_option(n) for n in ('panel', 'markets', 'products'))
        if panel is None or markets is None:
            raise UsageError("This subcommand needs --panel and --markets (or the config keys)")
        for path in (panel, markets, products):
            if path is not None:
                self.record_input(path)
        return load_panel(panel, markets, products)

    def scored(self, ds: PanelDataset) -> PanelDataset:
        cfg = self.config
        return attach_scores(ds, _kernel(cfg.get('image_kernel')), _kernel(cfg.get('adv_kernel')),
                             float(cfg.get('image_divisor', 100.0)), float(cfg.get('adv_divisor', 1e10)),
                             bool(cfg.get('strict_window', False)))

    def spec(self) -> DemandSpec:
        model = dict(self.config.get('model') or {})
        if getattr(self.args, 'model', None) is not None:
            model['model_kind'] = self.args.model
        if model.get('instruments') is not None:
            model['instruments'] = tuple(model['instruments'])
        try:
            return DemandSpec(**model)
        except TypeError as error:
            raise UsageError(f"Invalid model config: {error}") from None

    def scenario(self) -> Scenario:
        path = self.path_option('scenario')
        if path is None:
            raise UsageError("This subcommand needs --scenario")
        self.record_input(path)
        try:
            scenario = Scenario.from_json(path)
        except (json.JSONDecodeError, TypeError) as error:
            raise UsageError(f"Invalid scenario file {path}: {error}") from None
        if getattr(self.args, 'pricing', None) is not None:
            scenario = Scenario(scenario.name, scenario.image_rule, scenario.ad_multiplier, scenario.ad_firm,
                                self.args.pricing)
        return scenario

    def write_csv(self, name: str, frame: pd.DataFrame, index: bool = False) -> None:
        self.write_text(name, frame.to_csv(index=index, lineterminator='\n', float_format='%.12g'))

    def write_json(self, name: str, value) -> None:
        self.write_text(name, json.dumps(value, indent=2, sort_keys=True, default=_json_default) + '\n')

    def write_text(self, name: str, text: str) -> None:
        path = self.output_dir / name
        path.write_text(text, encoding='utf-8', newline='')
        self.outputs[name] = hashlib.sha256(text.encode('utf-8')).hexdigest()

    def write_manifest(self, command: str, seed=None) -> None:
        manifest = {
            'command': command,
            'version': __version__,
            'config_hash': hashlib.sha256(_canonical(self.config).encode('utf-8')).hexdigest(),
            'options': {k: v for k, v in sorted(vars(self.args).items())
                        if k not in ('threads', 'output_dir', 'config', 'panel', 'markets', 'products', 'scenario',
                                     'func', 'verbose')},
            'inputs': dict(sorted(self.inputs.items())),
            'outputs': dict(sorted(self.outputs.items())),
            'seed': seed,
        }
        self.write_text('manifest.json', json.dumps(manifest, indent=2, sort_keys=True, default=str) + '\n')


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return None if np.isnan(value) else float(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def _finite(value: float) -> Optional[float]:
    return None if value is None or not np.isfinite(value) else float(value)


def cmd_simulate_data(run: Run) -> Optional[int]:
    values = dict(run.config.get('synth') or {})
    seed = run.args.seed if run.args.seed is not None else values.get('seed', run.config.get('seed', 0))
    values['seed'] = int(seed)
    try:
        cfg = SynthConfig.from_dict(values)
    except TypeError as error:
        raise UsageError(f"Invalid synth config: {error}") from None
    ds = generate(cfg)
    run.write_text(run.args.out, panel_to_csv(ds))
    run.write_text(run.args.markets_out, markets_to_csv(ds))
    return cfg.seed


def cmd_build_scores(run: Run) -> None:
    ds = run.load()
    scored = run.scored(ds).observations
    cfg = run.config
    obs = ds.observations
    first, last = int(obs['period'].min()), int(obs['period'].max())
    image = entity_scores(obs, 'firm_id', 'news_raw', _kernel(cfg.get('image_kernel')), first, last)
    adv = entity_scores(obs, 'brand_id', 'adv_raw', _kernel(cfg.get('adv_kernel')), first, last)
    image['score'] /= float(cfg.get('image_divisor', 100.0))
    adv['score'] /= float(cfg.get('adv_divisor', 1e10))
    table = scored.drop(columns=['market', 'market_size', 'expenditure_size'], errors='ignore').copy()
    table['is_cold'] = table['is_cold'].astype(np.int64)
    run.write_csv('scored_panel.csv', table)
    run.write_csv('image_series.csv', image.pivot(index='period', columns='firm_id', values='score'), index=True)
    run.write_csv('adv_series.csv', adv.pivot(index='period', columns='brand_id', values='score'), index=True)


def _estimate(run: Run):
    ds = run.scored(run.load())
    return ds, estimate(ds, run.spec())


def _write_estimate(run: Run, ds, est) -> None:
    table = est.table()
    run.write_csv('coefficients.csv', table)
    records = [{k: _finite(v) if isinstance(v, float) else v for k, v in row.items()}
               for row in table.to_dict(orient='records')]
    run.write_json('coefficients.json', {
        'coefficients': records, 'n_obs': int(est.n_obs), 'n_clusters': int(est.n_clusters),
        'model': est.spec.model_kind, 'foc_residual': float(est.foc_residual),
    })
    run.write_csv('first_stage.csv', first_stage_report(ds, est.spec))


def cmd_estimate(run: Run) -> None:
    ds, est = _estimate(run)
    _write_estimate(run, ds, est)


def cmd_elasticities(run: Run) -> None:
    _, est = _estimate(run)
    weighting = run.config.get('elasticity_weighting', 'observation')
    run.write_csv('elasticities.csv', group_mean_elasticities(est, weighting, run.threads), index=True)


def cmd_recover_costs(run: Run) -> None:
    _, est = _estimate(run)
    frame = est.data
    params = est.params
    costs = np.empty(len(frame))
    residuals = np.empty(len(frame))
    with warnings.catch_warnings(record=True):
        warnings.simplefilter('always')
        for _, rows, snap in market_snapshots(frame, 'delta_hat', params):
            costs[rows] = recover_costs(snap, params)
            residuals[rows] = foc_residual(snap, params, costs[rows])
    table = frame[['product_id', 'firm_id', 'region_id', 'period', 'price']].assign(
        marginal_cost=costs, markup=frame['price'].to_numpy() - costs, foc_residual=residuals)
    run.write_csv('marginal_costs.csv', table)


def cmd_counterfactual(run: Run) -> None:
    scenario = run.scenario()
    ds, est = _estimate(run)
    report = simulate(ds, est, scenario, run.threads)
    run.write_csv('counterfactual_firms.csv', report.firms)
    run.write_csv('counterfactual_monthly.csv', report.monthly)
    run.write_csv('counterfactual_images.csv', report.images)


def cmd_ad_equivalence(run: Run) -> None:
    scenario = run.scenario()
    ds, est = _estimate(run)
    tau = dict(run.config.get('tau') or {})
    periods = tau.pop('periods', None)
    result = ad_equivalence_tau(ds, est, scenario, periods=periods, threads=run.threads, **tau)
    run.write_csv('tau_curve.csv', result.revenue_curve)
    run.write_json('tau.json', {'tau': result.tau, 'target_revenue': result.target_revenue,
                                'iterations': result.iterations, 'advertiser': scenario.advertiser})


def cmd_summarize(run: Run) -> None:
    run.write_csv('summary.csv', summarize(run.load()))


COMMANDS = {
    'simulate-data': cmd_simulate_data, 'build-scores': cmd_build_scores, 'estimate': cmd_estimate,
    'elasticities': cmd_elasticities, 'recover-costs': cmd_recover_costs, 'counterfactual': cmd_counterfactual,
    'ad-equivalence': cmd_ad_equivalence, 'summarize': cmd_summarize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='demand-forge', description="Structural nested logit demand toolkit.")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='SUBCOMMAND', parser_class=_Parser)
    sub.required = True
    for name, summary in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument('--config', help="JSON config file")
        p.add_argument('--output-dir', '-o', default='.', help="directory for outputs (default: current)")
        p.add_argument('--threads', type=int, default=None,
                       help="worker threads (default: all cores; DEMAND_FORGE_THREADS overrides)")
        p.add_argument('--verbose', '-v', action='store_true')
        if name == 'simulate-data':
            p.add_argument('--out', default='panel.csv', help="observation CSV name inside the output dir")
            p.add_argument('--markets-out', default='markets.csv')
            p.add_argument('--seed', type=int, default=None)
            continue
        p.add_argument('--panel', help="observation CSV")
        p.add_argument('--markets', help="market CSV")
        p.add_argument('--products', help="optional product metadata CSV")
        if name in ('estimate', 'elasticities', 'recover-costs', 'counterfactual', 'ad-equivalence'):
            p.add_argument('--model', choices=['nested_logit', 'cenl'], default=None)
        if name in ('counterfactual', 'ad-equivalence'):
            p.add_argument('--scenario', help="scenario JSON file")
            p.add_argument('--pricing', choices=['regulated', 'bertrand'], default=None)
        if name == 'recover-costs':
            p.add_argument('--pricing', choices=['regulated', 'bertrand'], default=None,
                           help="accepted for symmetry; costs always assume Nash-Bertrand conduct")
    return parser


def _fail(kind: str, error: BaseException, code: int) -> int:
    record = {'error': kind, 'type': type(error).__name__, 'message': str(error)}
    residual = getattr(error, 'residual', None)
    if residual is not None:
        record['residual'] = _finite(residual)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format='%(levelname)s %(name)s: %(message)s')
        run = Run(args)
        seed = COMMANDS[args.command](run)
        run.write_manifest(args.command, seed)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    except UsageError as error:
        return _fail('usage', error, 2)
    except DataError as error:
        return _fail('data', error, 3)
    except NumericalError as error:
        return _fail('numerical', error, 4)
    return 0


if __name__ == '__main__':
    sys.exit(main())
