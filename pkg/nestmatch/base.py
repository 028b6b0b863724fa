'''
Base classes for printable results and for the patch-grid simulation
'''
import sciris as sc


__all__ = ['FlexPretty', 'ParsObj', 'BaseSim']


class FlexPretty(sc.prettyobj):
    '''
    Mixin for results objects: ``repr()`` and ``obj.brief()`` give a one-line
    summary (defined by ``_brief()``), ``obj.disp()`` gives every attribute.
    '''

    def __repr__(self):
        try:
            return self._brief()
        except Exception as E: # pragma: no cover
            return sc.objectid(self) + f'Warning, could not summarize object:\n{E}'

    def _brief(self):
        return sc.objectid(self)

    def _output(self, string, output):
        if output:
            return string
        print(string)
        return

    def brief(self, output=False):
        ''' Print or return the one-line summary '''
        return self._output(self._brief(), output)

    def disp(self, output=False):
        ''' Print or return the full representation '''
        return self._output(sc.prepr(self), output)



class ParsObj(FlexPretty):
    '''
    An object driven by a ``nm.Pars`` dict: ``obj['key']`` reads and writes
    ``obj.pars['key']``, and unknown keys raise ``sc.KeyNotFoundError``.
    '''

    def __init__(self, pars):
        if not isinstance(pars, dict):
            errormsg = f'Parameters must be supplied as a dict, not {type(pars)}'
            raise TypeError(errormsg)
        self.pars = pars
        return

    def _check_key(self, key):
        if key not in self.pars:
            errormsg = f'Parameter "{key}" not found; available parameters are:\n' + '\n'.join(self.pars.keys())
            raise sc.KeyNotFoundError(errormsg)
        return

    def __getitem__(self, key):
        self._check_key(key)
        return self.pars[key]

    def __setitem__(self, key, value):
        self._check_key(key)
        self.pars[key] = value
        return



class BaseSim(ParsObj):
    '''
    Round bookkeeping for the patch-grid simulation, plus lookup of the
    interventions that modify its event stream.
    '''

    @property
    def npts(self):
        ''' Number of rounds to simulate '''
        return int(self.pars.get('rounds', 0) or 0)

    def _brief(self):
        labelstr = f'"{self.label}"' if self.label else '<no label>'
        if self.already_run:
            s = self.summary
            results = f'events={s.events:n} max_backlog={s.max_backlog:n} drain={s.drain_time:n}'
        else:
            results = 'not run'
        return f'ParallelSim({labelstr}; L={self["grid_l"]}; rounds={self.npts}; results: {results})'

    def get_intervention(self, label, die=True):
        '''
        Return the last intervention whose label or class matches.

        Args:
            label (str/type): intervention label (by default its class name), or class
            die   (bool): raise ValueError if nothing matches, else return None
        '''
        matches = []
        for intervention in sc.tolist(self.pars['interventions']):
            if isinstance(label, type):
                found = isinstance(intervention, label)
            else:
                found = getattr(intervention, 'label', None) == label
            if found:
                matches.append(intervention)
        if not matches:
            if die:
                errormsg = f'No interventions matching "{label}" were found'
                raise ValueError(errormsg)
            return None
        return matches[-1]
