'''
Discrete-event simulation of a square grid of patch processors decoding a live
stream of detection events.

Matching decisions come from the serial matcher, fed round by round; each
augmentation it performs becomes a work item charged to a patch, one tick per
matcher operation plus one tick per hop of inter-patch communication. The
simulation then tracks when each patch is busy, stalled or idle, how far it
falls behind the stream, and how long the grid takes to drain at the end.

Rounds are generated, matched and accounted one at a time, so a long run only
holds the matcher's vertices and the per-round metrics.
'''

import math
import heapq
import numpy as np
import pandas as pd
import sciris as sc
from dataclasses import dataclass, field, asdict
from .settings import options as nmo
from . import utils as nmu
from . import defaults as nmd
from . import base as nmb
from . import parameters as nmp
from . import nest as nmn
from . import matcher as nmm
from . import interventions as nmi


__all__ = ['Patch', 'PatchGrid', 'WorkItem', 'RoundMetrics', 'ParallelSim', 'run_parallel', 'resolve_spanning_tree',
           'repair_inconsistency', 'account_round', 'finish_algorithm', 'parallel_sweep']


#%% Simulation state

@dataclass
class WorkItem:
    '''
    One augmentation of the matcher, as processed by the grid. A work item that
    touches patches outside its owner's 3×3 neighborhood is spanning: its owner
    reaches the remote patches one hop at a time, and they stall meanwhile.
    '''
    id: int
    round: int
    root: int
    vertices: list
    footprint: list
    owner: int
    cost: int
    comm: int = 0
    stalled: list = field(default_factory=list)
    notify: list = field(default_factory=list)
    spanning: bool = False
    repair: bool = False
    spills: int = 0
    start: int = None
    end: int = None


@dataclass
class RoundMetrics:
    ''' What happened on the grid during one round '''
    round: int
    events: int
    mean_backlog: float
    max_backlog: int
    stalls: int
    messages: int
    repairs: int
    spills: int
    idle_fraction: float
    n_items: int

    def to_dict(self):
        return asdict(self)


class Patch(sc.prettyobj):
    '''
    One processor, responsible for the balls in a side×side square of the
    lattice in every round. Its clock is the tick at which it next becomes free.
    '''

    def __init__(self, grid, index, row, col):
        self.grid = grid
        self.index = index
        self.row = row
        self.col = col
        self.stalled_by = None
        self.n_items = 0
        self.notifications = 0
        return

    @property
    def coords(self):
        return (self.row, self.col)

    @property
    def free_at(self):
        return int(self.grid.free_at[self.index])

    def neighbors(self):
        ''' Indices of the up to eight patches around this one '''
        L = self.grid.grid_l
        out = []
        for r in range(max(0, self.row-1), min(L, self.row+2)):
            for c in range(max(0, self.col-1), min(L, self.col+2)):
                if (r, c) != self.coords:
                    out.append(r*L + c)
        return out

    def __repr__(self):
        stalled = f'; stalled by {self.stalled_by}' if self.stalled_by is not None else ''
        return f'Patch({self.row}, {self.col}; free_at={self.free_at}; items={self.n_items}{stalled})'


class PatchGrid(nmb.FlexPretty):
    '''
    The grid of patches plus the event queue. Entries are processed in
    (timestamp, sender, sequence) order, so runs are deterministic. Work items
    are dropped once scheduled; only their counts are kept.

    Args:
        grid_l (int): patches per side
        side   (int): balls per patch side
        T_q    (int): ticks per round
        history_window (int): rounds of events a patch keeps locally
    '''

    def __init__(self, grid_l, side, T_q, history_window=None):
        self.grid_l = int(grid_l)
        self.side = int(side)
        self.T_q = int(T_q)
        self.history_window = history_window
        self.n_patches = self.grid_l**2
        self.free_at = np.zeros(self.n_patches, dtype=np.int64)
        self.patches = [Patch(self, i, i // self.grid_l, i % self.grid_l) for i in range(self.n_patches)]
        self.heap = []
        self.seq = 0
        self.n_items = 0
        self.repair_owner = {}    # Vertex -> patch that took responsibility for it
        self.repair_patches = {}  # Vertex -> patches stalled until it is matched again
        self.stream_end = 0
        self.last_delivery = 0
        self.counts = sc.objdict({k: {} for k in ['messages', 'stalls', 'repairs', 'spills', 'busy', 'items', 'spanning']})
        return

    def _brief(self):
        return f'PatchGrid({self.grid_l}×{self.grid_l}; T_q={self.T_q}; items={self.n_items})'

    def index(self, row, col):
        return row*self.grid_l + col

    def coords(self, index):
        return divmod(int(index), self.grid_l)

    def hops(self, a, b):
        ''' Manhattan distance between two patches '''
        (ra, ca), (rb, cb) = self.coords(a), self.coords(b)
        return abs(ra - rb) + abs(ca - cb)

    def is_local(self, home, footprint):
        ''' Whether every patch of the footprint lies in the 3×3 neighborhood of home '''
        rh, ch = self.coords(home)
        return all(max(abs(r - rh), abs(c - ch)) <= 1 for r, c in map(self.coords, footprint))

    def round_of(self, tick):
        return int(tick) // self.T_q

    def count(self, key, tick, n=1):
        r = self.round_of(tick)
        self.counts[key][r] = self.counts[key].get(r, 0) + n
        return

    def _add_busy(self, start, end, n_patches=1):
        ''' Spread busy ticks over the rounds the interval overlaps '''
        tick = start
        while tick < end:
            r = self.round_of(tick)
            stop = min(end, (r+1)*self.T_q)
            self.counts.busy[r] = self.counts.busy.get(r, 0) + (stop - tick)*n_patches
            tick = stop
        return

    def push(self, timestamp, sender, kind, payload):
        heapq.heappush(self.heap, (int(timestamp), int(sender), self.seq, kind, payload))
        self.seq += 1
        return

    def schedule(self, item, now):
        '''
        Start a work item once its owner and every patch it stalls are free, and
        hold them all until it ends.
        '''
        involved = [item.owner] + [p for p in item.stalled if p != item.owner]
        start = max(int(now), int(self.free_at[involved].max()))
        end = start + item.cost + item.comm
        self.free_at[involved] = end
        item.start, item.end = start, end
        owner = self.patches[item.owner]
        owner.n_items += 1
        owner.stalled_by = None
        self._add_busy(start, end, len(involved))
        for p in involved[1:]:
            self.patches[p].stalled_by = item.owner
        if len(involved) > 1:
            self.count('stalls', now, len(involved) - 1)
        if item.spanning:
            self.count('messages', now, len(item.footprint) - 1)
            self.count('spanning', now)
        for p in item.notify:
            self.push(end + self.hops(item.owner, p), item.owner, 'notify', (p, item.id))
        if item.spills:
            self.count('spills', now, item.spills)
        self.count('items', now)
        return start, end

    def deliver(self, timestamp, dest, item_id):
        self.patches[dest].notifications += 1
        self.count('messages', timestamp)
        self.last_delivery = max(self.last_delivery, timestamp)
        return

    def process_until(self, tick):
        ''' Handle every queued entry with a timestamp before the given tick '''
        while self.heap and (tick is None or self.heap[0][0] < tick):
            timestamp, sender, _, kind, payload = heapq.heappop(self.heap)
            if kind == 'arrive':
                self.schedule(payload, timestamp)
            elif kind == 'notify':
                self.deliver(timestamp, *payload)
            else: # pragma: no cover
                errormsg = f'Unknown event kind "{kind}"'
                raise ValueError(errormsg)
        return


#%% Grid operations

def resolve_spanning_tree(grid, item):
    '''
    Give a work item whose footprint leaves its owner's 3×3 neighborhood to the
    lowest (row, col) patch of the footprint. Every other footprint patch stalls
    until it finishes, and the owner pays one tick per hop to each of them.

    Returns:
        True if ownership moved, False if the footprint was already local
    '''
    if grid.is_local(item.owner, item.footprint):
        return False
    owner = min(item.footprint)
    item.owner = owner
    item.stalled = sorted((set(item.footprint) | set(item.stalled)) - {owner})
    item.comm = sum(grid.hops(owner, p) for p in item.footprint if p != owner)
    item.notify = []
    item.spanning = True
    return True


def repair_inconsistency(grid, owner, vertices, patches, tick):
    '''
    Make the owner patch responsible for detection events whose matches were
    dissolved; the other patches involved stall until those events are matched
    again. No-op if there is nothing to repair.
    '''
    if not len(vertices):
        return
    others = sorted(set(patches) - {owner})
    for v in vertices:
        grid.repair_owner[v] = owner
        grid.repair_patches[v] = others
    grid.count('repairs', tick)
    grid.count('messages', tick, len(others))
    return


def account_round(grid, t, events=0):
    '''
    Metrics for round t, taken at the tick the next round starts: each patch's
    backlog is how many ticks it still has to work through.
    '''
    tick = (t+1)*grid.T_q
    backlog = np.maximum(grid.free_at - tick, 0)
    busy = grid.counts.busy.get(t, 0)
    get = lambda key: int(grid.counts[key].get(t, 0))
    return RoundMetrics(round=int(t), events=int(events), mean_backlog=float(backlog.mean()),
                        max_backlog=int(backlog.max()), stalls=get('stalls'), messages=get('messages'),
                        repairs=get('repairs'), spills=get('spills'),
                        idle_fraction=1.0 - busy/(grid.n_patches*grid.T_q), n_items=get('items'))


def finish_algorithm(grid):
    '''
    Drain every queue after the stream has ended.

    Returns:
        Ticks from the arrival of the final round until the last patch is free
    '''
    grid.process_until(None)
    end = max(int(grid.free_at.max()), int(grid.last_delivery))
    return max(0, end - grid.stream_end)


#%% The simulation

class ParallelSim(nmb.BaseSim):
    '''
    Simulate a grid of patch processors decoding a stream of detection events.

    Without a nest, a LayeredNest of the grid's extent is built and sampled one
    round at a time. Each round's events go to the matcher as soon as they are
    drawn; the augmentations and repairs of the warm-up rounds are held back to
    calibrate T_q, after which every round is charged to the grid as it arrives.

    Args:
        pars   (dict): grid parameters to modify from their defaults (see ``nm.grid_pars()``)
        nest   (Nest): the nest; built from the grid parameters if None
        events (list): the event stream; sampled from the nest if None
        label  (str):  the name of the simulation
        kwargs (dict): additional parameters; passed to ``nm.grid_pars()``

    **Examples**::

        sim = nm.ParallelSim(grid_l=8, rounds=1000, p=5e-4)
        sim.run()
        print(sim.summary)
    '''

    def __init__(self, pars=None, nest=None, events=None, label=None, **kwargs):
        pars = nmp.grid_pars(**sc.mergedicts(pars, kwargs))
        super().__init__(pars)
        self.nest = nest
        self.stream = events
        self.label = label
        self.initialized = False
        self.already_run = False
        self.results = None
        self.summary = None
        self.matching = None
        nmu.set_metadata(self)
        return


    @property
    def side(self):
        return int(round(math.sqrt(self['patch_n'])))


    @property
    def fed(self):
        ''' Every event given to the matcher so far, in arrival order '''
        return self.matcher.events


    def initialize(self, force=False):
        ''' Build the nest, and attach the matcher and interventions '''
        if self.initialized and not force:
            return self
        L = self['grid_l']*self.side
        if self.nest is None:
            p = self['p'] if self['p'] > 0 else nmd.default_stick_classes()[0]['p']
            classes = nmd.default_stick_classes(p=p, diagonal_ratio=self['diagonal_ratio'])
            config = dict(lx=L, ly=L, rounds=max(self.npts, 1), stick_classes=classes, seed=self['seed'])
            self.nest = nmn.LayeredNest(config) if self.npts >= 3 else nmn.build_nest(config)
        extent = tuple(self.nest.shape[:2]) if self.nest.shape else None
        if extent != (L, L):
            errormsg = f'A {self["grid_l"]}×{self["grid_l"]} grid of {self.side}×{self.side} patches covers {L}×{L} balls, but the nest spans {extent}'
            raise ValueError(errormsg)
        self.matcher = nmm.Matcher(self.nest)
        self.pending = []
        self.t = 0
        for intervention in sc.tolist(self['interventions']):
            if isinstance(intervention, nmi.Intervention):
                intervention.initialize(self)
        self.initialized = True
        return self


    def ball_patch(self, balls):
        ''' Patch index of each ball '''
        c = self.nest.coords_of(balls)
        return (c[:,1] // self.side)*self['grid_l'] + c[:,0] // self.side


    def apply_interventions(self):
        ''' Apply each intervention in the model '''
        for i, intervention in enumerate(sc.tolist(self['interventions'])):
            if isinstance(intervention, nmi.Intervention):
                if not intervention.initialized: # pragma: no cover
                    intervention.initialize(self)
                intervention.apply(self)
            elif callable(intervention):
                intervention(self)
            else: # pragma: no cover
                errormsg = f'Intervention {i} ({intervention}) is neither callable nor an Intervention object: it is {type(intervention)}'
                raise TypeError(errormsg)
        return


    def finalize_interventions(self):
        for intervention in sc.tolist(self['interventions']):
            if isinstance(intervention, nmi.Intervention):
                intervention.finalize(self)
        return


    def iter_rounds(self):
        ''' Yield (t, events) for each simulated round, drawing new rounds only as they are needed '''
        if self.stream is not None:
            by_round = {}
            for event in self.stream:
                by_round.setdefault(event.round, []).append(event)
            for t in range(self.npts):
                yield t, by_round.get(t, [])
        elif self['p'] > 0:
            for t, events in nmn.round_stream(self.nest, seed=self['seed']):
                if t >= self.npts:
                    break
                yield t, events
        else:
            for t in range(self.npts):
                yield t, []
        return


    def feed(self, t, events):
        '''
        Give one round of events to the matcher and take the augmentations and
        repairs it performed. The grid model only charges time for them; it never
        changes what gets matched.
        '''
        self.t = t
        self.pending = list(events)
        self.apply_interventions()
        if self.pending:
            c = self.nest.coords_of([e.ball for e in self.pending])
            self.pending = [self.pending[i] for i in np.lexsort((c[:,0], c[:,1]))]
        matcher = self.matcher
        matcher.add_events(self.pending)
        matcher.run()
        rnd = sc.objdict(round=t, events=len(self.pending), stages=matcher.stages, repairs=matcher.repairs)
        matcher.stages, matcher.repairs = [], []
        return rnd


    def calibrate(self, rounds):
        ''' Average ticks of work per patch per round over the warm-up rounds, and the round length '''
        n = len(rounds)
        work = sum(stage.cost for rnd in rounds for stage in rnd.stages)
        n_patches = self['grid_l']**2
        self.T_c = work/(n*n_patches) if n else 0.0
        self.T_q = int(self['T_q']) if self['T_q'] is not None else max(1, int(math.ceil(2*self.T_c)))
        return self.T_c, self.T_q


    def make_items(self, grid, t, stages):
        ''' Turn the augmentations of round t into work items '''
        matcher = self.matcher
        items = []
        for stage in stages:
            footprint = sorted({int(p) for p in self.ball_patch(stage.balls)})
            home = int(self.ball_patch([matcher.balls[stage.root]])[0])
            repaired = [v for v in stage.vertices if v in grid.repair_owner]
            owner, stalled = home, []
            if repaired:
                owner = grid.repair_owner[repaired[0]]
                for v in repaired:
                    stalled += grid.repair_patches.pop(v)
                    del grid.repair_owner[v]
                footprint = sorted(set(footprint) | {owner})
            spills = 0
            if self['history_window'] is not None:
                spills = sum(matcher.events[v].round < t - self['history_window'] for v in stage.vertices)
            item = WorkItem(id=grid.n_items, round=t, root=stage.root, vertices=stage.vertices, footprint=footprint,
                            owner=owner, cost=stage.cost, stalled=sorted(set(stalled) - {owner}),
                            repair=bool(repaired), spills=int(spills))
            if not resolve_spanning_tree(grid, item):
                nearby = set(grid.patches[owner].neighbors())
                item.notify = [p for p in footprint if p in nearby]
            grid.n_items += 1
            items.append(item)
        return items


    def charge(self, grid, rnd):
        ''' Queue one round's repairs and work items on the grid, and process it up to the next round '''
        t = rnd.round
        tick = t*self.T_q
        for record in rnd.repairs:
            owner = int(self.ball_patch([self.matcher.balls[record.trigger]])[0])
            patches = [int(p) for p in self.ball_patch([self.matcher.balls[v] for v in record.vertices])]
            repair_inconsistency(grid, owner, record.vertices, patches, tick)
        for item in self.make_items(grid, t, rnd.stages):
            grid.push(tick, item.owner, 'arrive', item)
        grid.process_until((t+1)*self.T_q)
        return account_round(grid, t, rnd.events)


    def run(self, verbose=None):
        ''' Run the simulation '''
        T = sc.timer()
        if verbose is None:
            verbose = self['verbose']
        if self.already_run:
            errormsg = 'Cannot re-run an already run sim; please recreate or copy prior to a run'
            raise RuntimeError(errormsg)
        self.initialize()

        grid = None
        warmup = []
        metrics = []
        every = max(1, self.npts // 10)
        for t, events in self.iter_rounds():
            rnd = self.feed(t, events)
            if grid is None:
                warmup.append(rnd)
                if len(warmup) < self['warmup_rounds'] and t < self.npts-1:
                    continue
                self.calibrate(warmup)
                grid = self.grid = PatchGrid(self['grid_l'], self.side, self.T_q, self['history_window'])
                grid.stream_end = max(self.npts - 1, 0)*self.T_q
                todo, warmup = warmup, None
            else:
                todo = [rnd]
            for rnd in todo:
                metrics.append(self.charge(grid, rnd))
                if verbose >= 2:
                    sc.heading(f'Round {rnd.round}: {rnd.events} events, {len(rnd.stages)} items, max backlog {metrics[-1].max_backlog}')
            if verbose >= 1 and not (t % every):
                print(f'  Running {self.label or "sim"}: round {t+1}/{self.npts} ({T.toc(output=True):0.2f} s)')
        if grid is None: # No rounds at all
            self.calibrate([])
            grid = self.grid = PatchGrid(self['grid_l'], self.side, self.T_q, self['history_window'])

        self.drain_time = finish_algorithm(grid)
        self.finalize_interventions()
        self.matching = self.matcher.matching()
        self.results = pd.DataFrame([m.to_dict() for m in metrics],
                                    columns=nmd.metrics_cols + ['idle_fraction', 'n_items'])
        self.summarize()
        self.already_run = True
        if verbose:
            print(f'Run finished for "{self.label}" after {T.toc(output=True):0.1f} s: {self.brief(output=True)}')
        return self


    def summarize(self):
        res = self.results
        has = len(res) > 0
        self.summary = sc.objdict(
            events        = len(self.fed),
            n_items       = int(self.grid.n_items),
            spanning      = int(sum(self.grid.counts.spanning.values())),
            max_backlog   = int(res.max_backlog.max()) if has else 0,
            mean_backlog  = float(res.mean_backlog.mean()) if has else 0.0,
            drain_time    = int(self.drain_time),
            stalls        = int(res.stalls.sum()) if has else 0,
            messages      = int(sum(self.grid.counts.messages.values())),
            repairs       = int(res.repairs.sum()) if has else 0,
            spills        = int(res.spills.sum()) if has else 0,
            idle_fraction = float(res.idle_fraction.mean()) if has else 1.0,
            T_c           = float(self.T_c),
            T_q           = int(self.T_q),
            weight        = self.matching.total_weight,
        )
        return self.summary


    def catch_up(self, round, baseline_window=None):
        '''
        Rounds after the given round until the max backlog is back to its level
        before it (the max over the preceding window). None if it never recovers.
        '''
        res = self.results
        window = baseline_window or max(1, round)
        before = res.max_backlog[max(0, round-window):round]
        baseline = int(before.max()) if len(before) else 0
        after = res.max_backlog[round:].to_numpy()
        recovered = np.flatnonzero(after <= baseline)
        return int(recovered[0]) if len(recovered) else None


    def to_df(self):
        return self.results.copy()


    def to_csv(self, filename):
        self.results[nmd.metrics_cols].to_csv(filename, index=False, sep=nmo.sep, float_format=f'%.{nmo.precision}g')
        return filename


#%% Functional interface

def run_parallel(nest, events, pars=None, seed=None, **kwargs):
    '''
    Simulate the patch grid on a given nest and stream.

    Returns:
        (Matching, DataFrame of per-round metrics)

    **Example**::

        matching, metrics = nm.run_parallel(nest, events, grid_l=4, patch_n=16, rounds=nest.shape[2])
    '''
    pars = sc.mergedicts(pars, kwargs)
    if seed is not None:
        pars['seed'] = seed
    sim = ParallelSim(pars, nest=nest, events=events)
    sim.run()
    return sim.matching, sim.results


def single_run(sim):
    ''' Helper function for parallel_sweep(); rarely used on its own '''
    sim.run()
    return sim


def parallel_sweep(grid_ls, pars=None, parallel=True, **kwargs):
    '''
    Run the same configuration on several grid sizes.

    Returns:
        objdict with sims and a df of one summary row per grid size

    **Example**::

        sweep = nm.parallel_sweep([8, 16, 32], rounds=1000, p=5e-4)
        print(sweep.df)
    '''
    sims = [ParallelSim(pars, label=f'L={L}', **sc.mergedicts(kwargs, dict(grid_l=L))) for L in grid_ls]
    if parallel:
        sims = sc.parallelize(single_run, iterarg=sims)
    else:
        sims = [single_run(sim) for sim in sims]
    rows = [sc.mergedicts(dict(L=sim['grid_l']), sim.summary) for sim in sims]
    return sc.objdict(sims=sims, df=pd.DataFrame(rows))
