import json

import pandas as pd
import pytest

from demand_forge.cli import main

SMALL = {'firm_products': [5, 3, 2, 2], 'group_products': [6, 2, 2, 2], 'n_regions': 4, 'n_periods': 40}


@pytest.fixture(scope='module')
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp('cli')
    config = {'panel': 'data/panel.csv', 'markets': 'data/markets.csv', 'seed': 11, 'synth': SMALL}
    (root / 'cfg.json').write_text(json.dumps(config))
    (root / 'scenario.json').write_text(json.dumps(
        {'name': 'mean_of_rivals', 'image_rule': {'kind': 'mean_of_rivals', 'target_firm': 'F2'}}))
    (root / 'identity.json').write_text(json.dumps({'name': 'identity'}))
    assert main(['simulate-data', '--config', str(root / 'cfg.json'), '-o', str(root / 'data')]) == 0
    return root


def run(workspace, *args):
    return main([args[0], '--config', str(workspace / 'cfg.json'), *args[1:]])


def test_simulate_data_writes_panel_and_manifest(workspace):
    manifest = json.loads((workspace / 'data' / 'manifest.json').read_text())
    assert manifest['seed'] == 11
    assert set(manifest['outputs']) == {'panel.csv', 'markets.csv'}
    assert len(manifest['config_hash']) == 64


def test_estimate_emits_four_named_rows(workspace):
    out = workspace / 'estimate'
    assert run(workspace, 'estimate', '--model', 'nested_logit', '-o', str(out)) == 0
    table = pd.read_csv(out / 'coefficients.csv')
    assert table['name'].tolist() == ['price', 'ln_within_share', 'imgscore', 'cumadv']
    assert list(table.columns) == ['name', 'parameter', 'estimate', 'se', 'sw_f']
    record = json.loads((out / 'coefficients.json').read_text())
    assert [c['name'] for c in record['coefficients']] == table['name'].tolist()
    assert (out / 'first_stage.csv').exists()
    manifest = json.loads((out / 'manifest.json').read_text())
    assert set(manifest['inputs']) == {'panel.csv', 'markets.csv'}


def test_identity_counterfactual_has_zero_gaps(workspace):
    out = workspace / 'identity'
    assert run(workspace, 'counterfactual', '--scenario', str(workspace / 'identity.json'), '-o', str(out)) == 0
    firms = pd.read_csv(out / 'counterfactual_firms.csv')
    assert firms['volume_gap_pct'].abs().max() < 1e-9
    assert firms['firm_id'].iloc[-1] == 'Total'
    assert (out / 'counterfactual_monthly.csv').exists()


@pytest.mark.parametrize('command, files', [
    ('build-scores', {'scored_panel.csv', 'image_series.csv', 'adv_series.csv'}),
    ('elasticities', {'elasticities.csv'}),
    ('recover-costs', {'marginal_costs.csv'}),
    ('summarize', {'summary.csv'}),
])
def test_other_subcommands(workspace, command, files):
    out = workspace / command
    assert run(workspace, command, '-o', str(out)) == 0
    manifest = json.loads((out / 'manifest.json').read_text())
    assert set(manifest['outputs']) == files


def test_recovered_costs_satisfy_first_order_conditions(workspace):
    out = workspace / 'costs'
    assert run(workspace, 'recover-costs', '-o', str(out)) == 0
    assert pd.read_csv(out / 'marginal_costs.csv')['foc_residual'].max() < 1e-10


def test_ad_equivalence(workspace):
    out = workspace / 'tau'
    assert run(workspace, 'ad-equivalence', '--scenario', str(workspace / 'scenario.json'), '-o', str(out)) == 0
    result = json.loads((out / 'tau.json').read_text())
    assert 0 < result['tau'] < 2
    assert pd.read_csv(out / 'tau_curve.csv')['revenue'].is_monotonic_increasing


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(['bogus']) == 2
    err = capsys.readouterr().err
    assert 'usage' in err
    assert json.loads(err.strip().splitlines()[-1])['error'] == 'usage'


def test_missing_inputs_are_usage_errors(tmp_path, capsys):
    assert main(['estimate', '-o', str(tmp_path)]) == 2
    assert main(['estimate', '--panel', str(tmp_path / 'none.csv'), '--markets', str(tmp_path / 'none.csv'),
                 '-o', str(tmp_path)]) == 2


def test_bad_data_exit_code(workspace, tmp_path, capsys):
    panel = pd.read_csv(workspace / 'data' / 'panel.csv')
    pd.concat([panel, panel.iloc[:1]]).to_csv(tmp_path / 'dup.csv', index=False)
    code = main(['summarize', '--panel', str(tmp_path / 'dup.csv'), '--markets',
                 str(workspace / 'data' / 'markets.csv'), '-o', str(tmp_path / 'out')])
    assert code == 3
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record == {'error': 'data', 'type': 'DuplicateKey', 'message': record['message']}


def test_numerical_failure_exit_code(workspace, tmp_path, capsys):
    scenario = tmp_path / 'scenario.json'
    scenario.write_text(json.dumps({'name': 'x', 'image_rule': {'kind': 'mean_of_rivals', 'target_firm': 'F2'}}))
    (tmp_path / 'cfg.json').write_text(json.dumps({
        'panel': str(workspace / 'data' / 'panel.csv'), 'markets': str(workspace / 'data' / 'markets.csv'),
        'tau': {'tau_max': 1e-6, 'grid_max': 0.0}}))
    code = main(['ad-equivalence', '--config', str(tmp_path / 'cfg.json'), '--scenario', str(scenario),
                 '-o', str(tmp_path / 'out')])
    assert code == 4
    assert json.loads(capsys.readouterr().err.strip())['type'] == 'BracketFailure'


def test_outputs_identical_across_runs_and_threads(workspace, monkeypatch):
    scenario = str(workspace / 'scenario.json')
    outputs = []
    for threads, out in [('1', 'a'), ('4', 'b')]:
        monkeypatch.setenv('DEMAND_FORGE_THREADS', threads)
        assert run(workspace, 'counterfactual', '--scenario', scenario, '--pricing', 'bertrand',
                   '-o', str(workspace / out)) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted((workspace / out).iterdir())})
    assert outputs[0] == outputs[1]
