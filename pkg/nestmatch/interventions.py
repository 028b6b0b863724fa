'''
Interventions modify the detection-event stream of a patch-grid simulation
round by round. Define new ones by subclassing Intervention and implementing
apply().
'''

import inspect
import numpy as np
import sciris as sc
from . import utils as nmu
from . import nest as nmn


__all__ = ['Intervention', 'burst']


class Intervention:
    '''
    Base class for stream interventions. The repr shows the constructor call
    that recreates the intervention; use disp() for every attribute, and
    ``sim.get_intervention(label)`` to retrieve one after a run.

    Args:
        label (str): identifies the intervention in a sim; defaults to the class name
    '''
    def __init__(self, label=None):
        self._store_args()
        self.label = label or self.__class__.__name__
        self.rounds = [] # Rounds the intervention acts on
        self.initialized = False
        self.finalized = False
        return

    def __repr__(self):
        if self.__class__.__name__ not in __all__:
            return f'{self.__module__}.{self.__class__.__name__}()'
        try:
            json = self.to_json()
            parstr = ', '.join(f'{k}={v}' for k,v in json['pars'].items())
            return f'nm.{json["which"]}({parstr})'
        except Exception as E: # pragma: no cover
            return f'{type(self)} (error: {E})'

    def disp(self):
        return sc.pr(self)

    def _store_args(self):
        ''' Record the arguments of the subclass constructor that called us '''
        caller = inspect.getouterframes(inspect.currentframe())[2].frame
        _, _, _, values = inspect.getargvalues(caller)
        self.input_args = {}
        for key, value in values.items():
            if key == 'kwargs':
                self.input_args.update(value)
            elif key not in ['self', '__class__']:
                self.input_args[key] = value
        return

    def initialize(self, sim=None):
        ''' Called once the sim has built its nest and stream, before the first round '''
        self.initialized = True
        self.finalized = False
        return

    def finalize(self, sim=None):
        ''' Called once after the last round has been fed '''
        if self.finalized:
            errormsg = f'Intervention "{self.label}" already finalized'
            raise RuntimeError(errormsg)
        self.finalized = True
        return

    def apply(self, sim):
        '''
        Called at the start of every round, before its events reach the matcher:
        sim.t is the round and sim.pending holds its events.
        '''
        raise NotImplementedError

    def to_json(self):
        ''' Class name plus constructor arguments '''
        return dict(which=self.__class__.__name__, pars=sc.jsonify(self.input_args))



class burst(Intervention):
    '''
    Inject an artificially dense round: extra detection events on balls of the
    given round that do not already host one.

    Args:
        round    (int): the round to inject into
        n_events (int): the number of extra events; capped by the free balls in the round
        seed     (int): seed for choosing the balls
        verbose (bool): print a line when the burst is applied

    **Example**::

        sim = nm.ParallelSim(rounds=200, interventions=nm.burst(round=100, n_events=60))
        sim.run()
    '''
    def __init__(self, round, n_events, seed=None, verbose=False):
        super().__init__()
        if n_events < 0:
            errormsg = f'A burst needs a non-negative number of events, not {n_events}'
            raise ValueError(errormsg)
        self.round = int(round)
        self.n_events = int(n_events)
        self.seed = seed
        self.verbose = verbose
        self.rounds = [self.round]
        self.injected = []
        return


    def initialize(self, sim):
        super().initialize()
        if not (0 <= self.round < sim.npts):
            errormsg = f'Burst round {self.round} is outside the simulated rounds 0..{sim.npts-1}'
            raise ValueError(errormsg)
        return


    def apply(self, sim):
        if sim.t != self.round:
            return
        nest = sim.nest
        candidates = nest.balls_in_round(self.round)
        taken = {e.ball for e in sim.pending}
        candidates = np.array([b for b in candidates if b not in taken], dtype=np.int64)
        n = min(self.n_events, len(candidates))
        if n < self.n_events:
            nmu.warn(f'Burst at round {self.round} capped at {n} events: only {len(candidates)} balls are free')
        rng = nmu.make_rng(self.seed)
        chosen = np.sort(rng.choice(candidates, size=n, replace=False)) if n else []
        self.injected = [nmn.DetectionEvent(int(b), self.round) for b in chosen]
        sim.pending.extend(self.injected)
        if self.verbose:
            label = f'Sim "{sim.label}": ' if sim.label else ''
            print(f'{label}Round {self.round}: burst of {n} events injected')
        return


    def finalize(self, sim=None):
        super().finalize()
        if sim is not None and sim.t < self.round:
            errormsg = f'Burst at round {self.round} was never applied'
            raise RuntimeError(errormsg)
        return
