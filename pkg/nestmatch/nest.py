'''
Space-time nests: construction, error sampling, detection events and implicit
edge weights via shortest paths through the nest.
'''

import heapq
import bisect
import numpy as np
import pandas as pd
import sciris as sc
import networkx as nx
import scipy.sparse as sps
import scipy.sparse.csgraph as csg
from dataclasses import dataclass
from . import utils as nmu
from . import defaults as nmd
from . import base as nmb
from . import parameters as nmp


__all__ = ['Ball', 'Stick', 'Nest', 'LayeredNest', 'ErrorSample', 'DetectionEvent', 'ExplorationRegion', 'PathCache']
__all__ += ['build_nest', 'sample_errors', 'detection_events', 'round_stream', 'path_weight', 'distance_matrix',
            'events_to_df', 'events_from_df']


#%% Domain types

@dataclass(frozen=True)
class Ball:
    ''' A point where stick endpoints meet; the boundary is a single virtual ball '''
    id: int
    coords: tuple
    is_virtual_boundary: bool = False


@dataclass(frozen=True)
class Stick:
    ''' An independent error mechanism joining two balls, or a ball and the boundary '''
    id: int
    src: int
    dst: int
    p: float
    w: float
    kind: str = None

    @property
    def endpoints(self):
        return (self.src, self.dst)

    @property
    def is_boundary(self):
        return self.dst == nmd.BOUNDARY


@dataclass(frozen=True, order=True)
class DetectionEvent:
    ''' An odd-parity ball; ordering follows the ball id, i.e. (t, y, x) on lattice nests '''
    ball: int
    round: int = 0


class Nest(nmb.FlexPretty):
    '''
    A space-time nest of balls joined by weighted sticks. Sticks are stored as
    parallel arrays; dst is -1 for sticks that end on the boundary. The nest is
    immutable after construction and may be shared between matching problems.

    Args:
        coords (array): (n_balls, 3) integer coordinates (x, y, t), unique per ball
        src    (array): stick source balls
        dst    (array): stick destination balls, or -1 for the boundary
        p      (array): stick probabilities in (0, 1)
        kind   (array): optional stick class names
        b_max  (int):   maximum allowed ball degree
        p_max  (float): upper bound on stick probabilities; 1 means only p < 1 is enforced
        shape  (tuple): (lx, ly, rounds) for lattice nests

    **Example**::

        nest = nm.build_nest(nm.lattice_pars(lx=4, ly=4, rounds=4))
    '''

    def __init__(self, coords, src, dst, p, kind=None, b_max=None, p_max=None, shape=None):
        self.coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.p = np.asarray(p, dtype=np.float64)
        self.n_balls = len(self.coords)
        self.n_sticks = len(self.src)
        self.kind = np.asarray(kind if kind is not None else ['custom']*self.n_sticks, dtype=object)
        self.b_max = nmd.b_max if b_max is None else int(b_max)
        self.p_max = nmd.p_max if p_max is None else float(p_max)
        self.shape = shape
        self.validate()
        self.w = -np.log(self.p)
        self._make_adjacency()
        self._graph = None
        return


    def validate(self):
        ''' Check endpoints, probabilities and degree '''
        n = self.n_balls
        if not (len(self.dst) == len(self.p) == len(self.kind) == self.n_sticks):
            errormsg = f'Stick arrays have inconsistent lengths: src={self.n_sticks}, dst={len(self.dst)}, p={len(self.p)}, kind={len(self.kind)}'
            raise ValueError(errormsg)
        if self.n_sticks:
            if self.src.min() < 0 or self.src.max() >= n:
                errormsg = f'Stick sources must reference balls 0..{n-1}'
                raise ValueError(errormsg)
            if self.dst.min() < nmd.BOUNDARY or self.dst.max() >= n:
                errormsg = f'Stick destinations must reference balls 0..{n-1} or the boundary ({nmd.BOUNDARY})'
                raise ValueError(errormsg)
            if np.any(self.src == self.dst):
                errormsg = 'Sticks must join two distinct balls'
                raise ValueError(errormsg)
            bad = np.flatnonzero((self.p <= 0) | (self.p >= 1))
            if len(bad):
                errormsg = f'{len(bad)} stick(s) have probabilities outside (0, 1), e.g. stick {bad[0]} with p={self.p[bad[0]]}'
                raise ValueError(errormsg)
            if self.p_max < 1 and np.any(self.p > self.p_max):
                errormsg = f'Stick probabilities must not exceed p_max={self.p_max}; maximum is {self.p.max()}'
                raise ValueError(errormsg)
        if n and len(np.unique(self.coords, axis=0)) != n:
            errormsg = 'Ball coordinates must be unique'
            raise ValueError(errormsg)
        degree = self.degree
        if n and degree.max() > self.b_max:
            ball = int(np.argmax(degree))
            errormsg = f'Ball {ball} at {tuple(self.coords[ball])} has degree {degree[ball]}, above b_max={self.b_max}'
            raise ValueError(errormsg)
        return


    @property
    def degree(self):
        ''' Number of incident sticks per ball '''
        real = self.dst[self.dst >= 0]
        return np.bincount(self.src, minlength=self.n_balls) + np.bincount(real, minlength=self.n_balls)


    def _make_adjacency(self):
        ''' Incident-stick lists as CSR arrays; the boundary is node n_balls '''
        n = self.n_balls
        is_real = self.dst >= 0
        dst = np.where(is_real, self.dst, n)
        sticks = np.arange(self.n_sticks)
        ends_from = np.concatenate([self.src, self.dst[is_real]])
        ends_to = np.concatenate([dst, self.src[is_real]])
        ends_stick = np.concatenate([sticks, sticks[is_real]])
        order = np.argsort(ends_from, kind='stable')
        self.adj_nbr = ends_to[order]
        self.adj_stick = ends_stick[order]
        self.adj_w = self.w[self.adj_stick] if self.n_sticks else np.zeros(0)
        self.adj_ptr = np.zeros(n+1, dtype=np.int64)
        np.cumsum(np.bincount(ends_from, minlength=n), out=self.adj_ptr[1:])
        return


    @classmethod
    def from_sticks(cls, coords, sticks, b_max=None, p_max=None):
        '''
        Build a nest from explicit ball coordinates and (src, dst, p) rows, with
        dst = -1 for the boundary.

        **Example**::

            nest = nm.Nest.from_sticks([(0,0,0), (1,0,0)], [(0, 1, 0.2), (0, -1, 0.1)])
        '''
        sticks = [tuple(s) for s in sticks]
        src = [s[0] for s in sticks]
        dst = [s[1] for s in sticks]
        p = [s[2] for s in sticks]
        kind = [s[3] if len(s) > 3 else ('boundary' if s[1] == nmd.BOUNDARY else 'custom') for s in sticks]
        return cls(coords, src, dst, p, kind=kind, b_max=b_max, p_max=p_max)


    #%% Accessors

    @property
    def w_min(self):
        return float(self.w.min()) if self.n_sticks else np.nan

    @property
    def w_max(self):
        return float(self.w.max()) if self.n_sticks else np.nan

    @property
    def eps(self):
        ''' Absolute tightness tolerance used by the matcher and the certificate checker '''
        return nmd.eps_factor * self.w_min if self.n_sticks else nmd.eps_factor

    @property
    def R(self):
        from .analysis import compute_R # Here to avoid circular import
        return compute_R(self)

    @property
    def params(self):
        return sc.objdict(b_max=self.b_max, p_max=self.p_max, w_min=self.w_min, w_max=self.w_max,
                          R=self.R if self.n_sticks else None)

    def ball(self, i):
        ''' Return ball i, or the virtual boundary ball for -1 '''
        if i == nmd.BOUNDARY:
            return Ball(nmd.BOUNDARY, (), True)
        return Ball(int(i), tuple(int(c) for c in self.coords[i]))

    def stick(self, k):
        ''' Return stick k; dst is -1 for boundary sticks '''
        return Stick(int(k), int(self.src[k]), int(self.dst[k]), float(self.p[k]), float(self.w[k]), self.kind[k])

    def ball_id(self, x, y, t):
        ''' Dense id of the ball at (x, y, t) on a lattice nest '''
        lx, ly, _ = self.shape
        return (t*ly + y)*lx + x

    def neighbors(self, ball):
        ''' Neighbor and weight lists for one ball, in adjacency order; the boundary is reported as n_balls '''
        s, e = self.adj_ptr[ball], self.adj_ptr[ball+1]
        return self.adj_nbr[s:e].tolist(), self.adj_w[s:e].tolist()

    def coords_of(self, balls):
        ''' (n, 3) array of (x, y, t) for the given balls '''
        return self.coords[np.asarray(balls, dtype=np.int64)].reshape(-1, 3)

    def ball_round(self, ball):
        return int(self.coords[ball, 2])

    def balls_in_round(self, t):
        return np.flatnonzero(self.coords[:, 2] == t)

    def _brief(self):
        shape = f'{self.shape[0]}×{self.shape[1]}×{self.shape[2]}; ' if self.shape else ''
        return f'Nest({shape}balls={self.n_balls:n}; sticks={self.n_sticks:n})'


    #%% Graph views

    def csgraph(self):
        '''
        Directed sparse graph for scipy.sparse.csgraph: ball-ball sticks in both
        directions and ball-boundary sticks into node n_balls only, so that no
        path passes through the boundary. Parallel sticks keep the lightest weight.
        '''
        if self._graph is None:
            n = self.n_balls
            rows, cols, w = self.adj_from(), self.adj_nbr, self.adj_w
            keys = rows*(n+1) + cols
            order = np.lexsort((w, keys))
            keys, rows, cols, w = keys[order], rows[order], cols[order], w[order]
            first = np.ones(len(keys), dtype=bool)
            first[1:] = keys[1:] != keys[:-1]
            self._graph = sps.csr_matrix((w[first], (rows[first], cols[first])), shape=(n+1, n+1))
        return self._graph

    def adj_from(self):
        ''' Source ball of each adjacency entry '''
        return np.repeat(np.arange(self.n_balls), np.diff(self.adj_ptr))

    def to_networkx(self):
        ''' Undirected networkx graph with the boundary as node -1; parallel sticks keep the lightest weight '''
        G = nx.Graph()
        G.add_nodes_from(range(self.n_balls))
        for k in np.argsort(-self.w, kind='stable'): # Heaviest first, so lighter sticks overwrite
            stick = self.stick(k)
            G.add_edge(stick.src, stick.dst, weight=stick.w, stick=stick.id, kind=stick.kind)
        return G

    def to_df(self):
        ''' Ball and stick tables in the debug dump layout '''
        balls = pd.DataFrame(self.coords, columns=nmd.ball_cols[1:])
        balls.insert(0, 'ball_id', np.arange(self.n_balls))
        sticks = pd.DataFrame(dict(src=self.src, dst=self.dst, p=self.p, w=self.w))
        return sc.objdict(balls=balls, sticks=sticks)

    def to_csv(self, filename):
        '''
        Write the nest as CSV: ball rows (ball_id,x,y,t), a blank line, then stick
        rows (src,dst,p,w) with dst = -1 for the boundary.
        '''
        dfs = self.to_df()
        fmt = f'%.{nmu.nmo.precision}g'
        with open(filename, 'w', newline='') as f:
            dfs.balls.to_csv(f, index=False, sep=nmu.nmo.sep)
            f.write('\n')
            dfs.sticks.to_csv(f, index=False, sep=nmu.nmo.sep, float_format=fmt)
        return filename



#%% Construction

def build_nest(config=None, **kwargs):
    '''
    Build a cuboid lattice nest. Balls sit at integer (x, y, t); stick classes
    join each ball to its forward neighbor along the class offset; boundary sticks
    attach at the x = 0 and x = lx-1 faces, and time-boundary sticks (if
    configured) at the final round.

    Args:
        config (dict): lattice parameters (see ``nm.lattice_pars()``); kwargs override

    Returns:
        A Nest

    **Examples**::

        nest = nm.build_nest()
        nest = nm.build_nest(lx=1, ly=1, rounds=1, stick_classes=[dict(kind='boundary', p=0.1)])
    '''
    if isinstance(config, str):
        config = nmp.load_config(config)
    config = sc.mergedicts(config, kwargs)
    pars = nmp.lattice_pars(**config)
    lx, ly, rounds = int(pars['lx']), int(pars['ly']), int(pars['rounds'])

    # Ball coordinates in id order: id = (t*ly + y)*lx + x
    t, y, x = np.meshgrid(np.arange(rounds), np.arange(ly), np.arange(lx), indexing='ij')
    x, y, t = x.ravel(), y.ravel(), t.ravel()
    coords = np.column_stack([x, y, t])
    ids = np.arange(len(coords))

    src, dst, p, kind = [], [], [], []
    def add(s, d, prob, name):
        src.append(s)
        dst.append(d)
        p.append(np.full(len(s), prob))
        kind.append(np.full(len(s), name, dtype=object))
        return

    for stick_class in sc.tolist(pars['stick_classes']):
        name, prob = stick_class['kind'], stick_class['p']
        if name in nmd.stick_offsets:
            dx, dy, dt = nmd.stick_offsets[name]
            ok = (x + dx < lx) & (y + dy < ly) & (t + dt < rounds)
            s = ids[ok]
            add(s, s + (dt*ly + dy)*lx + dx, prob, name)
        elif name == 'boundary':
            for face in sorted({0, lx-1}):
                s = ids[x == 0] if face == 0 else ids[x == lx-1]
                add(s, np.full(len(s), nmd.BOUNDARY), prob, name)
            if lx == 1: # Both faces coincide: one stick per face
                s = ids[x == 0]
                add(s, np.full(len(s), nmd.BOUNDARY), prob, name)
        elif name == 'time_boundary':
            s = ids[t == rounds-1]
            add(s, np.full(len(s), nmd.BOUNDARY), prob, name)

    cat = lambda arrs, dtype: np.concatenate(arrs).astype(dtype) if arrs else np.zeros(0, dtype=dtype)
    nest = Nest(coords, cat(src, np.int64), cat(dst, np.int64), cat(p, np.float64), kind=cat(kind, object),
                b_max=pars['b_max'], p_max=pars['p_max'], shape=(lx, ly, rounds))
    return nest


class LayeredNest(nmb.FlexPretty):
    '''
    A lattice nest over many rounds that stores only a three-round slab: the
    first round, one interior round and the final round. Every other round is a
    shifted copy of the interior round, so neighbors and weights are generated
    on demand, with the same ball ids, adjacency order and weights that
    ``build_nest`` gives the full lattice. Memory does not grow with the number
    of rounds.

    Args:
        config (dict): lattice parameters (see ``nm.lattice_pars()``), with at least 3 rounds; kwargs override

    **Example**::

        nest = nm.LayeredNest(lx=64, ly=64, rounds=10_000, stick_classes=nm.default_stick_classes(p=5e-4))
        for t, events in nm.round_stream(nest, seed=1):
            pass
    '''

    def __init__(self, config=None, **kwargs):
        if isinstance(config, str):
            config = nmp.load_config(config)
        config = sc.mergedicts(config, kwargs)
        pars = nmp.lattice_pars(**config)
        lx, ly, rounds = int(pars['lx']), int(pars['ly']), int(pars['rounds'])
        if rounds < 3:
            errormsg = f'A layered nest needs at least 3 rounds, not {rounds}; use nm.build_nest() instead'
            raise ValueError(errormsg)
        self.slab = build_nest(config, rounds=3)
        self.shape = (lx, ly, rounds)
        self.layer = lx*ly
        self.n_balls = self.layer*rounds
        self.b_max = self.slab.b_max
        self.p_max = self.slab.p_max
        slab_round = self.slab.coords[self.slab.src, 2]
        self._sticks = [np.flatnonzero(slab_round == k) for k in range(3)] # Sticks starting in each slab round
        self.n_sticks = len(self._sticks[0]) + (rounds-2)*len(self._sticks[1]) + len(self._sticks[2])
        return

    def _brief(self):
        lx, ly, rounds = self.shape
        return f'LayeredNest({lx}×{ly}×{rounds}; balls={self.n_balls:n}; sticks={self.n_sticks:n})'

    @property
    def w_min(self):
        return self.slab.w_min

    @property
    def w_max(self):
        return self.slab.w_max

    @property
    def eps(self):
        return self.slab.eps

    @property
    def R(self):
        return self.slab.R

    def _slab(self, t):
        ''' Slab round standing in for round t, and the id shift from that slab round to round t '''
        k = 0 if t == 0 else 2 if t == self.shape[2]-1 else 1
        return k, (t - k)*self.layer

    def ball_id(self, x, y, t):
        lx, ly, _ = self.shape
        return (t*ly + y)*lx + x

    def ball_round(self, ball):
        return int(ball) // self.layer

    def balls_in_round(self, t):
        return np.arange(t*self.layer, (t+1)*self.layer, dtype=np.int64)

    def coords_of(self, balls):
        balls = np.asarray(balls, dtype=np.int64).reshape(-1)
        t, k = np.divmod(balls, self.layer)
        y, x = np.divmod(k, self.shape[0])
        return np.column_stack([x, y, t])

    def neighbors(self, ball):
        k, shift = self._slab(ball // self.layer)
        nbrs, w = self.slab.neighbors(ball - shift)
        end = self.slab.n_balls
        return [self.n_balls if b == end else b + shift for b in nbrs], w

    def round_sticks(self, t):
        ''' Source, destination and probability of the sticks starting in round t; dst is -1 for the boundary '''
        k, shift = self._slab(t)
        idx = self._sticks[k]
        dst = self.slab.dst[idx]
        return self.slab.src[idx] + shift, np.where(dst >= 0, dst + shift, dst), self.slab.p[idx]


#%% Sampling

class ErrorSample(sc.prettyobj):
    '''
    The set of highlighted sticks of one sample, plus the seed that drew it.
    Samples combine with ^ (symmetric difference).
    '''

    def __init__(self, highlighted, seed=None):
        self.highlighted = np.unique(np.asarray(highlighted, dtype=np.int64))
        self.seed = seed
        return

    def __len__(self):
        return len(self.highlighted)

    def __xor__(self, other):
        return ErrorSample(np.setxor1d(self.highlighted, other.highlighted), seed=None)

    def __eq__(self, other):
        return isinstance(other, ErrorSample) and np.array_equal(self.highlighted, other.highlighted)

    def mask(self, nest):
        ''' Boolean mask over the nest's sticks '''
        mask = np.zeros(nest.n_sticks, dtype=bool)
        mask[self.highlighted] = True
        return mask


def sample_errors(nest, seed=None):
    '''
    Highlight each stick independently with its probability p.

    Args:
        nest (Nest): the nest to sample from
        seed (int):  seed for ``np.random.default_rng``; the same seed gives the same sample
    '''
    rng = nmu.make_rng(seed)
    hits = rng.random(nest.n_sticks) < nest.p
    return ErrorSample(np.flatnonzero(hits), seed=seed)


def detection_events(nest, sample):
    '''
    Balls with an odd number of highlighted incident sticks, in (t, y, x) order.
    Boundary endpoints contribute parity only to their real endpoint.
    '''
    h = sample.highlighted
    dst = nest.dst[h]
    parity = np.bincount(nest.src[h], minlength=nest.n_balls) + np.bincount(dst[dst >= 0], minlength=nest.n_balls)
    balls = np.flatnonzero(parity % 2)
    if len(balls):
        c = nest.coords[balls]
        balls = balls[np.lexsort((c[:,0], c[:,1], c[:,2]))]
    return [DetectionEvent(int(b), int(nest.coords[b, 2])) for b in balls]


def round_stream(nest, seed=None):
    '''
    Sample errors and yield (t, events) for every round in order. A LayeredNest
    is sampled one round at a time, keeping only the parity that sticks into the
    next round carry forward; an explicit Nest is sampled whole and split by round.

    Args:
        nest (Nest/LayeredNest): a lattice nest
        seed (int): seed for ``np.random.default_rng``

    **Example**::

        nest = nm.LayeredNest(lx=8, ly=8, rounds=100)
        events = [e for t, batch in nm.round_stream(nest, seed=2) for e in batch]
    '''
    rounds = nest.shape[2]
    if not isinstance(nest, LayeredNest):
        by_round = {}
        for event in detection_events(nest, sample_errors(nest, seed=seed)):
            by_round.setdefault(event.round, []).append(event)
        for t in range(rounds):
            yield t, by_round.get(t, [])
        return

    rng = nmu.make_rng(seed)
    layer = nest.layer
    carry = np.zeros(layer, dtype=np.int64)
    for t in range(rounds):
        src, dst, p = nest.round_sticks(t)
        hit = rng.random(len(p)) < p
        base = t*layer
        src, dst = src[hit] - base, dst[hit]
        dst = dst[dst >= 0] - base
        parity = carry + np.bincount(src, minlength=layer) + np.bincount(dst[dst < layer], minlength=layer)
        carry = np.bincount(dst[dst >= layer] - layer, minlength=layer)
        balls = base + np.flatnonzero(parity % 2)
        yield t, [DetectionEvent(int(b), t) for b in balls]
    return


def events_to_df(events):
    ''' Events as a dataframe with columns ball_id,t '''
    return pd.DataFrame(dict(ball_id=[e.ball for e in events], t=[e.round for e in events]), columns=nmd.event_cols)


def events_from_df(df, nest=None):
    '''
    Events from a dataframe with columns ball_id,t; with a nest, balls are checked
    and rounds are taken from the nest coordinates.
    '''
    missing = [c for c in nmd.event_cols if c not in df.columns]
    if missing:
        errormsg = f'Events table is missing column(s) {missing}; expected {nmd.event_cols}'
        raise ValueError(errormsg)
    balls = df['ball_id'].to_numpy(dtype=np.int64)
    if nest is not None:
        if len(balls) and (balls.min() < 0 or balls.max() >= nest.n_balls):
            errormsg = f'Event balls must lie in 0..{nest.n_balls-1}'
            raise ValueError(errormsg)
        rounds = nest.coords_of(balls)[:, 2] if len(balls) else []
    else:
        rounds = df['t'].to_numpy(dtype=np.int64)
    if len(np.unique(balls)) != len(balls):
        errormsg = 'Each ball can host at most one detection event'
        raise ValueError(errormsg)
    events = sorted(DetectionEvent(int(b), int(t)) for b,t in zip(balls, rounds))
    if nest is not None and len(events): # Streaming order is (t, y, x)
        c = nest.coords_of([e.ball for e in events])
        events = [events[i] for i in np.lexsort((c[:,0], c[:,1], c[:,2]))]
    return events


#%% Shortest paths

class ExplorationRegion:
    '''
    Incremental Dijkstra from one source ball through the nest. Balls are settled
    in order of distance and only as far as queries require; every settled target
    ball (a detection event, or the boundary) is recorded as a hit.

    Args:
        nest    (Nest): the nest
        source  (int):  the source ball
        targets (dict): map from target ball to vertex id, shared with the owning PathCache
    '''

    def __init__(self, nest, source, targets):
        self.nest = nest
        self.source = source
        self.targets = targets
        self.dist = {}       # Settled ball -> distance
        self.radii = []      # Settled distances, non-decreasing
        self.balls = []      # Settled balls, same order
        self.hits = []       # (distance, target) for settled targets other than the source
        self.heap = [(0.0, source)]
        self.steps = 0
        return

    def step(self):
        ''' Settle the next ball; returns False once nothing is left to settle '''
        nest = self.nest
        boundary = nest.n_balls
        while self.heap:
            d, ball = heapq.heappop(self.heap)
            if ball in self.dist:
                continue
            self.dist[ball] = d
            self.radii.append(d)
            self.balls.append(ball)
            self.steps += 1
            if ball == boundary:
                self.hits.append((d, nmd.BOUNDARY))
                return True # The boundary is an endpoint only
            if ball != self.source and ball in self.targets:
                self.hits.append((d, self.targets[ball]))
            for nbr, w in zip(*nest.neighbors(ball)):
                if nbr not in self.dist:
                    heapq.heappush(self.heap, (d + w, nbr))
            return True
        return False

    def distance_to(self, ball):
        ''' Distance to a ball (or n_balls for the boundary), extending as needed '''
        while ball not in self.dist:
            if not self.step():
                return nmd.NO_PATH
        return self.dist[ball]

    def iter_balls(self):
        ''' Yield (distance, ball) for every settled ball in order of distance, extending lazily '''
        i = 0
        while True:
            if i < len(self.balls):
                yield self.radii[i], self.balls[i]
                i += 1
            elif not self.step():
                return

    def add_target(self, ball, target):
        ''' Record a target that appeared after its ball was already settled '''
        if ball in self.dist and ball != self.source:
            bisect.insort(self.hits, (self.dist[ball], target))
        return

    def covered(self, radius):
        ''' Balls at distance strictly below radius '''
        while self.heap and self.heap[0][0] < radius:
            self.step()
        n = bisect.bisect_left(self.radii, radius)
        return self.balls[:n]

    def shell(self, lo, hi):
        ''' (distance, ball) pairs with lo <= distance < hi, extending as needed '''
        self.covered(hi)
        i, j = bisect.bisect_left(self.radii, lo), bisect.bisect_left(self.radii, hi)
        return list(zip(self.radii[i:j], self.balls[i:j]))


class PathCache:
    '''
    Per-problem memoization of shortest paths: one lazily-extended region per
    source ball. Create one per matching problem and discard it afterwards; the
    nest itself is never modified.

    Args:
        nest  (Nest): the nest
        balls (list): target balls, in vertex order
    '''

    def __init__(self, nest, balls=None):
        self.nest = nest
        self.targets = {}
        self.regions = {}
        self.steps = 0 # Balls settled by regions that have since been released
        if balls is not None:
            self.add_targets(balls)
        return

    def add_targets(self, balls, start=None):
        ''' Register target balls; vertex ids continue from the current count unless given '''
        start = len(self.targets) if start is None else start
        for i, ball in enumerate(balls):
            ball = int(ball)
            self.targets[ball] = start + i
            for region in self.regions.values():
                region.add_target(ball, start + i)
        return

    def region(self, ball):
        if ball not in self.regions:
            self.regions[ball] = ExplorationRegion(self.nest, ball, self.targets)
        return self.regions[ball]

    def release(self, balls):
        ''' Drop the regions of the given source balls '''
        for ball in balls:
            region = self.regions.pop(ball, None)
            if region is not None:
                self.steps += region.steps
        return

    @property
    def total_steps(self):
        return self.steps + sum(r.steps for r in self.regions.values())

    def distance(self, a, b):
        '''
        Weight of the lightest path from ball a to ball b (or the boundary, -1).
        Ball-ball queries always run from the lower id, so results are symmetric.
        '''
        if b == nmd.BOUNDARY:
            return self.region(a).distance_to(self.nest.n_balls)
        if a == b:
            return 0.0
        if b < a:
            a, b = b, a
        return self.region(a).distance_to(b)

    def boundary_distance(self, a):
        return self.distance(a, nmd.BOUNDARY)


def path_weight(nest, a, b, cache=None):
    '''
    Weight of the minimum-weight stick path from ball a to ball b, or to the
    nearest boundary attachment if b is -1. Returns ``nm.NO_PATH`` (infinity)
    if the target cannot be reached.

    Args:
        nest  (Nest): the nest
        a     (int):  a real ball
        b     (int):  a ball, or -1 for the boundary
        cache (PathCache): optional per-problem cache to reuse

    **Example**::

        w = nm.path_weight(nest, 0, nest.n_balls-1)
    '''
    if not (0 <= a < nest.n_balls):
        errormsg = f'Path queries must start from a real ball in 0..{nest.n_balls-1}, not {a}'
        raise ValueError(errormsg)
    if cache is None:
        cache = PathCache(nest)
    return cache.distance(int(a), int(b))


def distance_matrix(nest, balls):
    '''
    Dense distances between the given balls, and from each to the boundary, via
    scipy's Dijkstra. Unreachable pairs are infinite. A LayeredNest has no
    explicit graph, so its distances come from a PathCache instead.

    Returns:
        D (array): (n, n) ball-ball distances
        b (array): (n,) boundary distances
    '''
    balls = np.asarray(balls, dtype=np.int64)
    n = len(balls)
    if n == 0:
        return np.zeros((0, 0)), np.zeros(0)
    if isinstance(nest, LayeredNest):
        cache = PathCache(nest)
        ids = balls.tolist()
        D = np.array([[cache.distance(a, c) for c in ids] for a in ids], dtype=np.float64)
        b = np.array([cache.boundary_distance(a) for a in ids], dtype=np.float64)
        return D, b
    dist = csg.dijkstra(nest.csgraph(), directed=True, indices=balls)
    D = dist[:, balls]
    b = dist[:, nest.n_balls]
    D = np.minimum(D, D.T) # Symmetrize away round-off
    return D, b
