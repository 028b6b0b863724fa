"""
Test other things not covered in other tests.
"""

import os
import tempfile
import numpy as np
import sciris as sc
import nestmatch as nm
import pytest


def ok(string, newline=True):
    ''' Print out a successful test nicely '''
    return sc.printgreen(f'✓ {string}' + '\n'*newline)


def test_options():
    sc.heading('Testing options...')

    d = nm.options.to_dict()
    assert isinstance(d, dict), 'Expected a dict'
    assert set(['verbose', 'warnings', 'debug', 'precision', 'sep']) <= set(d), 'Expected the core options'
    ok('Options to_dict() works')

    with nm.options.context(debug=True, verbose=0):
        assert nm.options.debug and nm.options.verbose == 0, 'Context should set the options'
    assert nm.options.debug == d['debug'], 'Context should restore the options'
    ok('Options as context works')

    with nm.options.context(warnings='error'):
        with pytest.raises(RuntimeError):
            nm.warn('Converted to an error')
    ok('Warnings can be raised as errors')

    nm.options.disp()
    ok('Options disp() works')

    filename = 'tmp_settings.json'
    nm.options.save(filename)
    assert os.path.exists(filename), 'Did not write file to disk'
    nm.options.load(filename)
    os.remove(filename)
    ok('Options load() and save() work')

    return sc.dcp(nm.options)


def test_pars():
    sc.heading('Testing parameters...')

    pars = nm.lattice_pars(lx=3)
    assert pars['lx'] == 3 and pars['ly'] == nm.default_lattice_pars['ly'], 'Overrides should merge with defaults'
    with pytest.raises(ValueError):
        nm.lattice_pars(lx=0)
    with pytest.raises(ValueError):
        nm.lattice_pars(stick_classes=[dict(kind='space_x', p=0.1), dict(kind='space_x', p=0.2)])
    with pytest.raises(ValueError):
        nm.lattice_pars(stick_classes=[dict(kind='wormhole', p=0.1)])
    with pytest.raises(ValueError):
        nm.grid_pars(patch_n=10)
    ok('Invalid lattice and grid parameters rejected')

    with tempfile.TemporaryDirectory() as folder:
        jsonfile = os.path.join(folder, 'lattice.json')
        pars.to_json(jsonfile)
        loaded = nm.lattice_pars().from_json(jsonfile)
        assert loaded == pars, 'Parameters should survive a JSON round trip'

        yamlfile = os.path.join(folder, 'lattice.yaml')
        with open(yamlfile, 'w') as f:
            f.write('lx: 3\nly: 2\nrounds: 2\nstick_classes:\n  - kind: space_x\n    p: 0.01\n  - kind: boundary\n    p: 0.02\n')
        nest = nm.build_nest(yamlfile)
        assert nest.shape == (3, 2, 2), f'YAML config should set the lattice shape, not {nest.shape}'
        assert set(nest.kind) == {'space_x', 'boundary'}, 'YAML config should set the stick classes'

        config = nm.RunConfig.from_file(yamlfile, seed=9, out=folder)
        assert config.seed == 9 and config.lattice['lx'] == 3, 'Run configs accept bare lattice files'
        config.to_json(os.path.join(folder, 'config.json'))
        again = nm.RunConfig.from_file(os.path.join(folder, 'config.json'))
        assert again.to_dict() == config.to_dict(), 'Run configs should survive a JSON round trip'

        with pytest.raises(FileNotFoundError):
            nm.load_config(os.path.join(folder, 'missing.json'))
    ok('Configs load from JSON and YAML')

    return pars


def test_utils():
    sc.heading('Testing utilities...')

    s1 = nm.spawn_seeds(1, 5)
    s2 = nm.spawn_seeds(1, 5)
    assert s1 == s2 and len(set(s1)) == 5, 'Spawned seeds should be reproducible and distinct'
    rng = nm.make_rng(3)
    assert nm.make_rng(rng) is rng, 'Existing generators pass through'
    assert nm.fmt_float(0.1) == '0.10000000000000001', 'Full precision should round-trip'
    ok('Seeds and formatting work')

    burst = nm.burst(round=10, n_events=20, seed=4)
    assert repr(burst) == 'nm.burst(round=10, n_events=20, seed=4, verbose=False)', f'Unexpected repr {burst}'
    assert burst.to_json()['which'] == 'burst', 'Interventions should export their class name'
    ok(f'Interventions print as {burst}')

    return s1


if __name__ == '__main__':

    with sc.timer():
        opts  = test_options()
        pars  = test_pars()
        seeds = test_utils()
