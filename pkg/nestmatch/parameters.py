'''
Handle lattice and patch-grid parameters
'''

import os
import yaml
import numpy as np
import sciris as sc
from . import defaults as nmd

__all__ = ['Pars', 'lattice_pars', 'grid_pars', 'load_config', 'default_lattice_pars', 'default_grid_pars']


# %% Pars (parameters) class

class Pars(dict):
    '''
    Class to hold a dictionary of parameters, and associated methods.

    Usually not called by the user directly -- use ``nm.lattice_pars()`` or
    ``nm.grid_pars()`` instead.

    Args:
        pars (dict): dictionary of parameters
        which (str): either 'lattice' or 'grid'; determines the valid keys
    '''
    def __init__(self, pars=None, *args, which='lattice', **kwargs):
        if pars is None:
            pars = {}
        super().__init__(*args, **kwargs)
        self.update(pars)
        self.which = which
        return

    def __repr__(self, *args, **kwargs):
        ''' Use odict repr, but with a custom class name and no quotes '''
        return sc.odict.__repr__(self, quote='', numsep='.', classname='nm.Parameters()', *args, **kwargs)

    @property
    def defaults(self):
        return default_lattice_pars if self.which == 'lattice' else default_grid_pars

    def copy(self):
        ''' Shortcut for deep copying '''
        return sc.dcp(self)

    def to_dict(self):
        ''' Return parameters as a new dictionary '''
        return {k: v for k, v in self.items()}

    def to_json(self, filename, **kwargs):
        '''
        Export parameters to a JSON file.

        Args:
            filename (str): filename to save to
            kwargs (dict): passed to ``sc.savejson``

        **Example**::
            pars.to_json('lattice.json')
        '''
        return sc.savejson(filename=filename, obj=self.to_dict(), **kwargs)

    def from_json(self, filename, **kwargs):
        '''
        Import parameters from a JSON (or YAML) file.

        Args:
            filename (str): filename to load from
            kwargs (dict): passed to ``sc.loadjson``

        **Example**::
            pars.from_json('lattice.json')
        '''
        pars = load_config(filename, **kwargs)
        self.update({k:v for k,v in pars.items() if k in self.defaults})
        return self

    def validate(self, die=True):
        '''
        Perform validation on the parameters

        Args:
            die (bool): whether to raise an exception if an error is encountered
        '''
        errormsg = ''

        # Check that keys are correct
        valid_keys = set(self.defaults.keys())
        keys = set(self.keys())
        if keys != valid_keys:
            diff1 = valid_keys - keys
            diff2 = keys - valid_keys
            if diff1:
                errormsg += 'The parameter set is not valid since the following keys are missing:\n'
                errormsg += f'{sc.strjoin(diff1)}\n'
            if diff2:
                errormsg += 'The parameter set is not valid since the following keys are not recognized:\n'
                errormsg += f'{sc.strjoin(diff2)}\n'

        if not errormsg:
            if self.which == 'lattice':
                errormsg += self._validate_lattice()
            else:
                errormsg += self._validate_grid()

        if errormsg:
            if die:
                raise ValueError(errormsg)
            else:
                print(errormsg)
        return self

    def _validate_lattice(self):
        ''' Check extents and stick classes; degree is checked when the nest is built '''
        errormsg = ''
        for key in ['lx', 'ly']:
            if int(self[key]) != self[key] or self[key] < 1:
                errormsg += f'Lattice extent "{key}" must be a positive integer, not {self[key]}\n'
        if int(self['rounds']) != self['rounds'] or self['rounds'] < 0:
            errormsg += f'Number of rounds must be a non-negative integer, not {self["rounds"]}\n'
        p_max = self['p_max']
        if not (0 < p_max <= 1):
            errormsg += f'p_max must lie in (0, 1], not {p_max}\n'
        kinds = []
        for sc_class in sc.tolist(self['stick_classes']):
            kind = sc_class.get('kind')
            p = sc_class.get('p')
            if kind not in nmd.stick_kinds:
                errormsg += f'Stick kind "{kind}" not recognized; choices are: {sc.strjoin(nmd.stick_kinds)}\n'
                continue
            if kind in kinds:
                errormsg += f'Stick kind "{kind}" is configured more than once\n'
            kinds.append(kind)
            if not sc.isnumber(p) or p <= 0 or p >= 1:
                errormsg += f'Stick class "{kind}" has probability {p}; probabilities must lie strictly between 0 and 1\n'
            elif p_max < 1 and p > p_max:
                errormsg += f'Stick class "{kind}" has probability {p} above p_max={p_max}\n'
        return errormsg

    def _validate_grid(self):
        ''' Check the patch-grid geometry and timing parameters '''
        errormsg = ''
        if int(self['grid_l']) != self['grid_l'] or self['grid_l'] < 1:
            errormsg += f'Grid size must be a positive integer, not {self["grid_l"]}\n'
        side = np.sqrt(self['patch_n'])
        if self['patch_n'] < 1 or side != int(side):
            errormsg += f'Balls per patch (patch_n={self["patch_n"]}) must be a positive perfect square\n'
        if int(self['rounds']) != self['rounds'] or self['rounds'] < 0:
            errormsg += f'Number of rounds must be a non-negative integer, not {self["rounds"]}\n'
        if not (0 <= self['p'] < 1):
            errormsg += f'Stick probability must lie in [0, 1), not {self["p"]}\n'
        if self['history_window'] is not None and self['history_window'] < 1:
            errormsg += f'History window must be at least one round, not {self["history_window"]}\n'
        if self['T_q'] is not None and self['T_q'] <= 0:
            errormsg += f'T_q must be positive, not {self["T_q"]}\n'
        return errormsg


# %% Parameter defaults

default_lattice_pars = {
    'lx':            5,     # Extent along x, including both boundary faces
    'ly':            5,     # Extent along y
    'rounds':        5,     # Number of rounds of detection (extent along t)
    'stick_classes': nmd.default_stick_classes(),
    'seed':          1,     # Master seed for sampling
    'b_max':         nmd.b_max,
    'p_max':         nmd.p_max,
}

default_grid_pars = {
    'grid_l':         4,     # Patches per side of the grid
    'patch_n':        16,    # Balls per patch per round; the patch side is sqrt(patch_n)
    'rounds':         100,   # Rounds of detection events streamed into the grid
    'p':              1e-3,  # Probability of the non-diagonal sticks
    'diagonal_ratio': 0.25,  # Diagonal stick probability relative to p
    'seed':           1,
    'history_window': 50,    # Rounds retained locally before accesses spill to external storage
    'T_q':            None,  # Ticks per round; None calibrates T_q = 2*T_c from a warm-up run
    'warmup_rounds':  20,    # Rounds used to calibrate T_c
    'interventions':  None,
    'verbose':        1,
}


def _make_pars(defaults, which, validate, die, kwargs):
    mismatches = [key for key in kwargs.keys() if key not in defaults]
    if len(mismatches):
        errormsg = f'Key(s) {mismatches} not found; available keys are {list(defaults.keys())}'
        raise sc.KeyNotFoundError(errormsg)
    pars = sc.mergedicts(defaults, kwargs, _copy=True)  # Merge all pars with kwargs and copy
    pars = Pars(pars, which=which)
    if validate:
        pars.validate(die=die)
    return pars


def lattice_pars(validate=True, die=True, **kwargs):
    '''
    Function for creating lattice (nest) parameters.

    Args:
        validate (bool): whether to perform validation on the parameters
        die      (bool): whether to raise an exception if validation fails
        kwargs   (dict): custom parameter values

    **Example**::
        pars = nm.lattice_pars(lx=8, ly=8, rounds=8, stick_classes=nm.default_stick_classes(p=0.005))
    '''
    return _make_pars(default_lattice_pars, 'lattice', validate, die, kwargs)


def grid_pars(validate=True, die=True, **kwargs):
    '''
    Function for creating patch-grid simulation parameters.

    **Example**::
        pars = nm.grid_pars(grid_l=8, rounds=1000, p=5e-4)
    '''
    return _make_pars(default_grid_pars, 'grid', validate, die, kwargs)


def load_config(filename, **kwargs):
    '''
    Load a configuration dictionary from JSON, or from YAML if the extension is
    .yaml or .yml.

    Args:
        filename (str): the file to load
        kwargs (dict): passed to ``sc.loadjson``
    '''
    if not os.path.exists(filename):
        errormsg = f'Configuration file "{filename}" does not exist'
        raise FileNotFoundError(errormsg)
    ext = os.path.splitext(filename)[1].lower()
    if ext in ['.yaml', '.yml']:
        with open(filename) as f:
            config = yaml.safe_load(f)
    else:
        config = sc.loadjson(filename=filename, **kwargs)
    if config is None:
        config = {}
    if not isinstance(config, dict):
        errormsg = f'Configuration file "{filename}" must contain a mapping, not {type(config)}'
        raise ValueError(errormsg)
    return config
