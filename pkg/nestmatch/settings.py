'''
Global options for nestmatch, set directly or through environment variables::

    nm.options(verbose=0)        # silence progress output
    nm.options('defaults')       # reset everything

Each option has an environment variable ``NESTMATCH_<KEY>`` that sets its
default at import time.
'''

import os
import sciris as sc


__all__ = ['options']


#%% Option definitions: key -> (parser for the environment value, default, description)

optdefs = sc.objdict(
    verbose   = (float, 1, 'Verbosity: 0 is silent, 1 prints one line per stage or round, 2 adds headings'),
    warnings  = (str, 'warn', 'How warnings are handled: "warn", "print" or "error" (raise RuntimeError)'),
    debug     = (lambda s: bool(int(s)), False, 'Validate the matcher invariants after every primitive operation (slow)'),
    precision = (int, 17, 'Significant digits used when writing floats to CSV or JSON'),
    sep       = (str, ',', 'Separator used for CSV output'),
)

warning_choices = ['warn', 'print', 'error']


class Options(sc.objdict):
    '''
    Set options for nestmatch; see the module docstring for usage and
    ``nm.options.help()`` for the list of options. Use ``nm.options.context()``
    to change them inside a with block, and ``save()``/``load()`` to keep them.

    **Examples**::

        nm.options(debug=True) # Check every matcher invariant after every primitive
        with nm.options.context(verbose=0):
            nm.ParallelSim(grid_l=4).run()
    '''

    def __init__(self):
        super().__init__()
        defaults = self.get_orig_options()
        self.update(defaults)
        self.setattribute('orig_options', sc.dcp(defaults))
        return

    def __call__(self, *args, **kwargs):
        ''' Allow ``nm.options(verbose=0)`` instead of ``nm.options.set(verbose=0)`` '''
        return self.set(*args, **kwargs)

    def __repr__(self):
        return sc.objectid(self) + 'nestmatch options:\n' + sc.pp(self.to_dict(), output=True)

    def __enter__(self):
        return self

    def __exit__(self, *args, **kwargs):
        try:
            on_entry = self.on_entry
        except AttributeError as E:
            errormsg = 'Please use nm.options.context() if using a with block'
            raise AttributeError(errormsg) from E
        self.set(**{k:v for k,v in on_entry.items() if self[k] != v})
        self.delattribute('on_entry')
        return

    @staticmethod
    def get_orig_options():
        ''' Defaults, with any NESTMATCH_* environment variables applied '''
        options = sc.objdict()
        for key, (parse, default, desc) in optdefs.items():
            env = os.getenv(f'NESTMATCH_{key.upper()}')
            options[key] = parse(env) if env is not None else default
        return options

    def to_dict(self):
        return {k:v for k,v in self.items()}

    def _check(self, key, value):
        if key == 'warnings' and value not in warning_choices:
            errormsg = f'Warnings option "{value}" not recognized; choices are {warning_choices}'
            raise ValueError(errormsg)
        if key == 'precision' and not (1 <= int(value) <= 17):
            errormsg = f'Precision must be between 1 and 17 significant digits, not {value}'
            raise ValueError(errormsg)
        if key == 'sep' and len(value) != 1:
            errormsg = f'CSV separator must be a single character, not "{value}"'
            raise ValueError(errormsg)
        return value

    def set(self, key=None, value=None, **kwargs):
        '''
        Change one or more options.

        Args:
            key    (str):    the option to change, or 'defaults' to reset everything
            value  (varies): the new value; None or 'default' resets that option
            kwargs (dict):   several options at once
        '''
        if key in ['default', 'defaults']:
            kwargs = self.orig_options
        elif key is not None:
            kwargs = sc.mergedicts(kwargs, {key:value})

        for key, value in kwargs.items():
            if key not in self.orig_options:
                errormsg = f'Option "{key}" not recognized; options are "defaults" or:\n' + '\n'.join(self.orig_options.keys())
                raise sc.KeyNotFoundError(errormsg)
            if value in [None, 'default']:
                value = self.orig_options[key]
            self[key] = self._check(key, value)
        return

    def context(self, **kwargs):
        ''' Like set(), but restores the previous values at the end of a with block '''
        self.setattribute('on_entry', {k:self[k] for k in kwargs.keys()})
        self.set(**kwargs)
        return self

    def disp(self):
        ''' Print every option with its current value '''
        for key, value in self.items():
            keystr = sc.colorize(f'  {key:>10s}: ', fg='cyan', output=True)
            print(f'{keystr}{value!r}')
        return

    def help(self):
        ''' Print every option with its default, environment variable and description '''
        sc.heading('nestmatch options', spacesafter=0)
        for key, (parse, default, desc) in optdefs.items():
            changed = ' (modified)' if self[key] != self.orig_options[key] else ''
            print(f'{key}: {self[key]!r}{changed}')
            print(f'    default {self.orig_options[key]!r}; environment NESTMATCH_{key.upper()}')
            print(f'    {desc}')
        return

    def load(self, filename, verbose=True, **kwargs):
        ''' Load options from a JSON file written by save() '''
        saved = sc.loadjson(filename=filename, **kwargs)
        self.set(**{k:v for k,v in saved.items() if v != self.get(k)})
        if verbose: print(f'Settings loaded from {filename}')
        return

    def save(self, filename, verbose=True, **kwargs):
        ''' Save the current options as a JSON file '''
        output = sc.savejson(filename=filename, obj=self.to_dict(), **kwargs)
        if verbose: print(f'Settings saved to {filename}')
        return output


options = Options()
