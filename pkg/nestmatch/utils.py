'''
Utilities shared across nestmatch: random number handling, warnings, formatting,
and the exceptions raised by the package
'''

import warnings
import numpy as np
import sciris as sc
from . import version as nmv
from .settings import options as nmo


# Specify all externally visible things this file defines
__all__ = ['make_rng', 'spawn_seeds', 'warn', 'fmt_float']
__all__ += ['InvariantError', 'EnumerationLimitError', 'DomainError', 'NoPathError']


def make_rng(seed=None):
    ''' Create an independent generator; an existing generator is passed through '''
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, n):
    '''
    Derive n independent integer seeds from a master seed, so that trials run in
    any order (or in parallel) give the same results.

    **Example**::

        seeds = nm.spawn_seeds(1, 100)
    '''
    children = np.random.SeedSequence(seed).spawn(int(n))
    return [int(child.generate_state(1)[0]) for child in children]


def warn(msg, category=None, verbose=None, die=None):
    ''' Helper function to handle non-critical warnings according to nm.options.warnings '''
    if category is None:
        category = RuntimeWarning
    if verbose is None:
        verbose = nmo.verbose
    if die:
        action = 'error'
    else:
        action = nmo.warnings

    if action == 'error':
        raise RuntimeError(msg)
    elif action == 'print':
        if verbose:
            print(f'Warning: {msg}')
    else:
        warnings.warn(msg, category=category, stacklevel=2)
    return


def fmt_float(value, precision=None):
    ''' Format a float with the configured number of significant digits '''
    if precision is None:
        precision = nmo.precision
    return f'{float(value):.{precision}g}'


def set_metadata(obj):
    ''' Set standard metadata for an object '''
    obj.created = sc.now()
    obj.version = nmv.__version__
    return


#% Exceptions

class InvariantError(AssertionError):
    '''
    Raised when a matcher invariant fails under debug validation, or when a
    matcher primitive is called outside its contract.
    '''
    pass


class EnumerationLimitError(ValueError):
    ''' Raised when the brute-force oracle is asked to enumerate too many events '''

    def __init__(self, n, limit):
        msg = f'Refusing to enumerate {n} events: the brute-force oracle is limited to {limit}'
        super().__init__(msg)


class DomainError(ValueError):
    ''' Raised when an analytic quantity is requested outside its domain of convergence '''
    pass


class NoPathError(RuntimeError):
    ''' Raised by the matcher when a vertex cannot reach any other vertex or the boundary '''
    pass
