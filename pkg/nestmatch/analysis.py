'''
Quantitative analysis: the expected number of nearby error chains (n_av),
the weight-ratio ceiling R, cluster-size statistics of sampled errors, and
runtime scaling of the matcher.
'''

import math
import numpy as np
import pandas as pd
import sciris as sc
import scipy.sparse as sps
import scipy.sparse.csgraph as csg
import scipy.stats as sps_stats
from dataclasses import dataclass
from . import utils as nmu
from . import defaults as nmd
from . import base as nmb
from . import nest as nmn
from . import matcher as nmm


__all__ = ['NavParams', 'compute_nav', 'nav_double_sum', 'compute_R', 'ClusterHistogram', 'cluster_sizes',
           'cluster_stats', 'expected_isolated', 'runtime_scaling', 'dense_instance', 'worst_case_scaling']


#%% Nearby-chain bound

@dataclass(frozen=True)
class NavParams:
    '''
    Parameters of the n_av bound: chains of length L occur with probability at
    most A*x**L, balls have degree at most b_max, and stick weights differ by at
    most a factor R.
    '''
    A: float = 1.0
    x: float = 1e-5
    b_max: int = nmd.b_max
    R: int = 2

    def validate(self):
        errormsg = ''
        if not (0 < self.x < 1):
            errormsg = f'x must lie strictly between 0 and 1, not {self.x}'
        elif self.A <= 0 or self.A*self.x >= 1:
            errormsg = f'A must be positive with A*x < 1, not A*x = {self.A*self.x}'
        elif self.b_max < 1 or self.R < 1:
            errormsg = f'b_max and R must be at least 1, not b_max={self.b_max}, R={self.R}'
        elif self.ratio >= 1:
            errormsg = f'The sum diverges: x*b_max**R = {self.ratio} must be below 1'
        if errormsg:
            raise nmu.DomainError(errormsg)
        return self

    @property
    def ratio(self):
        ''' Growth factor per chain stick, x*b_max**R '''
        return self.x * float(self.b_max)**self.R


def _nav_params(params, kwargs):
    if params is None:
        params = NavParams(**kwargs)
    elif isinstance(params, dict):
        params = NavParams(**sc.mergedicts(params, kwargs))
    return params.validate()


def compute_nav(params=None, both_endpoints=False, **kwargs):
    '''
    Closed-form upper bound on the average number of other error chains close
    enough to a given chain to let an alternating tree grow:

        n_av = A(1-x) x b_max**(2R) / (1 - x b_max**R)**2

    Args:
        params (NavParams): the parameters, or a dict of them; kwargs also accepted
        both_endpoints (bool): count chains near either end of the chain, doubling the bound

    **Examples**::

        nm.compute_nav(A=1, x=1e-5, b_max=12, R=2) # About 0.21
        nm.compute_nav(nm.NavParams(x=1e-6))
    '''
    p = _nav_params(params, kwargs)
    nav = p.A * (1 - p.x) * p.x * float(p.b_max)**(2*p.R) / (1 - p.ratio)**2
    return 2*nav if both_endpoints else nav


def nav_double_sum(params=None, tol=None, both_endpoints=False, max_terms=10_000_000, **kwargs):
    '''
    Direct evaluation of the n_av double sum over the lengths of both chains,

        sum_{Lv>=1} (1-x) x**(Lv-1) sum_{Lu>=1} b_max**(R(Lv+Lu)) A x**Lu,

    with each sum truncated once its remaining tail falls below tol relative to
    its total. If that needs more than max_terms terms, the sums stop there and
    the rest of each geometric tail is added in closed form.
    '''
    p = _nav_params(params, kwargs)
    tol = nmd.nav_tol if tol is None else tol
    q = p.ratio
    n_terms = int(math.ceil(math.log(tol*(1 - q)) / math.log(q))) + 1 if q > 0 else 1
    truncated = n_terms > max_terms
    n_terms = min(n_terms, int(max_terms))
    L = np.arange(1, n_terms+1, dtype=np.float64)
    growth = float(p.b_max)**p.R
    outer = (1 - p.x) * np.exp((L - 1)*np.log(p.x) + L*np.log(growth))
    inner = p.A * np.exp(L*np.log(p.x) + L*np.log(growth))
    outer, inner = outer.tolist(), inner.tolist()
    if truncated: # Terms beyond n_terms: sum_{L>n} q**L = q**(n+1)/(1-q)
        n = n_terms
        outer.append((1 - p.x) * math.exp(n*math.log(p.x) + (n+1)*math.log(growth)) / (1 - q))
        inner.append(p.A * math.exp((n+1)*(math.log(p.x) + math.log(growth))) / (1 - q))
    nav = math.fsum(outer) * math.fsum(inner)
    return 2*nav if both_endpoints else nav


def compute_R(nest):
    '''
    Ceiling of the ratio between the heaviest and lightest stick weights.

    **Example**::

        nm.compute_R(nm.build_nest()) # 2 for the default stick classes
    '''
    if nest.n_sticks == 0:
        errormsg = 'Cannot compute R for a nest with no sticks'
        raise nmu.DomainError(errormsg)
    return int(math.ceil(nest.w_max/nest.w_min - 1e-12))


#%% Cluster statistics

class ClusterHistogram(nmb.FlexPretty):
    '''
    Counts of connected highlighted-stick clusters by size (number of sticks),
    pooled over samples, with an exponential decay fit.

    Args:
        counts    (array): counts[s] is the number of clusters with s sticks
        n_samples (int):   number of samples pooled
    '''

    def __init__(self, counts=None, n_samples=0):
        self.counts = np.zeros(1, dtype=np.int64) if counts is None else np.asarray(counts, dtype=np.int64)
        self.n_samples = int(n_samples)
        self.A_fit = np.nan
        self.x_fit = np.nan
        self.r2 = np.nan
        return

    @property
    def sizes(self):
        return np.flatnonzero(self.counts)

    @property
    def n_clusters(self):
        return int(self.counts.sum())

    def __add__(self, other):
        n = max(len(self.counts), len(other.counts))
        counts = np.zeros(n, dtype=np.int64)
        counts[:len(self.counts)] += self.counts
        counts[:len(other.counts)] += other.counts
        return ClusterHistogram(counts, self.n_samples + other.n_samples)

    def fit(self, min_obs=None):
        '''
        Fit log(count per sample) = log(A) + size*log(x) by least squares over
        sizes with at least min_obs observations.
        '''
        min_obs = nmd.min_fit_obs if min_obs is None else min_obs
        sizes = np.flatnonzero(self.counts >= min_obs)
        sizes = sizes[sizes > 0]
        if len(sizes) < 2:
            nmu.warn(f'Only {len(sizes)} cluster sizes have {min_obs}+ observations; decay fit skipped')
            return self
        logs = np.log(self.counts[sizes] / max(self.n_samples, 1))
        res = sps_stats.linregress(sizes, logs)
        self.A_fit = float(np.exp(res.intercept))
        self.x_fit = float(np.exp(res.slope))
        self.r2 = float(res.rvalue**2)
        return self

    def survival(self):
        ''' Fraction of clusters with at least n sticks, for n = 0..max size '''
        if self.n_clusters == 0:
            return np.zeros(len(self.counts))
        tail = np.cumsum(self.counts[::-1])[::-1]
        return tail / self.n_clusters

    def to_df(self):
        sizes = np.arange(1, len(self.counts))
        return pd.DataFrame(dict(size=sizes, count=self.counts[1:]), columns=nmd.histogram_cols)

    def fit_summary(self):
        return dict(A_fit=self.A_fit, x_fit=self.x_fit, r2=self.r2)

    def _brief(self):
        return f'ClusterHistogram(samples={self.n_samples}; clusters={self.n_clusters}; x_fit={self.x_fit:.3g}; r2={self.r2:.3g})'


def cluster_sizes(nest, highlighted):
    '''
    Sizes (in sticks) of the connected components of the highlighted sticks.
    Sticks only connect through real balls, never through the boundary.
    '''
    h = np.asarray(highlighted, dtype=np.int64)
    if len(h) == 0:
        return np.zeros(0, dtype=np.int64)
    src, dst = nest.src[h], nest.dst[h]
    real = dst >= 0
    graph = sps.coo_matrix((np.ones(real.sum()), (src[real], dst[real])), shape=(nest.n_balls, nest.n_balls))
    _, labels = csg.connected_components(graph, directed=False)
    comp = labels[src]
    _, sizes = np.unique(comp, return_counts=True)
    return sizes


def _cluster_trial(seed, nest, p):
    rng = nmu.make_rng(seed)
    probs = nest.p if p is None else p
    highlighted = np.flatnonzero(rng.random(nest.n_sticks) < probs)
    return np.bincount(cluster_sizes(nest, highlighted), minlength=1)


def cluster_stats(nest, p=None, trials=100, seed=1, fit=True, parallel=False):
    '''
    Histogram of highlighted-stick cluster sizes over repeated samples.

    Args:
        nest     (Nest):  the nest
        p        (float): probability for every stick; if None, each stick's own probability
        trials   (int):   number of samples
        seed     (int):   master seed; per-trial seeds are derived from it
        fit      (bool):  whether to fit the exponential decay
        parallel (bool):  run trials with ``sc.parallelize``

    **Example**::

        hist = nm.cluster_stats(nm.build_nest(lx=16, ly=16, rounds=16), p=1e-3, trials=1000)
    '''
    seeds = nmu.spawn_seeds(seed, trials)
    if parallel:
        counts = sc.parallelize(_cluster_trial, iterarg=seeds, kwargs=dict(nest=nest, p=p))
    else:
        counts = [_cluster_trial(s, nest, p) for s in seeds]
    total = np.zeros(max([len(c) for c in counts], default=1), dtype=np.int64)
    for c in counts:
        total[:len(c)] += c
    hist = ClusterHistogram(total, trials)
    if fit:
        hist.fit()
    return hist


def expected_isolated(nest, p=None):
    '''
    Expected number of highlighted sticks per sample that share no ball with any
    other highlighted stick: the sum over sticks of p times the probability that
    every adjacent stick is dark.
    '''
    probs = np.broadcast_to(nest.p if p is None else p, (nest.n_sticks,)).astype(np.float64)
    dark = np.log1p(-probs)
    real = nest.dst >= 0
    per_ball = np.bincount(nest.src, weights=dark, minlength=nest.n_balls)
    per_ball += np.bincount(nest.dst[real], weights=dark[real], minlength=nest.n_balls)
    log_dark = per_ball[nest.src] - dark
    log_dark[real] += per_ball[nest.dst[real]] - dark[real]
    return float(np.sum(probs * np.exp(log_dark)))


#%% Runtime scaling

def _time_matching(nest, events):
    if not events:
        return 0.0, 0
    T = sc.timer()
    matcher = nmm.Matcher(nest, events)
    matcher.run()
    elapsed = T.toc(output=True)
    return elapsed, int(sum(matcher.ops.values()))


def runtime_scaling(Ls=(10, 20, 40, 80), p=0.005, rounds=None, trials=1, seed=1, ratio_limit=1.5, verbose=None):
    '''
    Matching time per detection event across lattice sizes at fixed p.

    Args:
        Ls          (list):  lattice sizes; each nest is L×L×rounds
        p           (float): stick probability
        rounds      (int):   rounds per nest (default L)
        trials      (int):   samples per size
        ratio_limit (float): largest allowed ratio of time per event between any two sizes

    Returns:
        objdict with df (one row per L), ratio, and passed
    '''
    verbose = nmu.nmo.verbose if verbose is None else verbose
    rows = []
    for i, L in enumerate(Ls):
        nest = nmn.build_nest(lx=L, ly=L, rounds=L if rounds is None else rounds,
                              stick_classes=nmd.default_stick_classes(p=p))
        n_events, total, ops = 0, 0.0, 0
        for trial_seed in nmu.spawn_seeds([seed, i], trials):
            events = nmn.detection_events(nest, nmn.sample_errors(nest, seed=trial_seed))
            elapsed, count = _time_matching(nest, events)
            n_events += len(events)
            total += elapsed
            ops += count
        per_event = total/n_events if n_events else np.nan
        rows.append(dict(L=L, n_events=n_events, total_time=total, time_per_event=per_event,
                         ops_per_event=ops/n_events if n_events else np.nan))
        if verbose >= 1:
            print(f'  L={L}: {n_events} events, {total:0.3f} s, {per_event:0.3g} s/event')
    df = pd.DataFrame(rows, columns=nmd.scaling_cols)
    per_event = df.time_per_event.dropna()
    ratio = float(per_event.max()/per_event.min()) if len(per_event) > 1 else 1.0
    return sc.objdict(df=df, ratio=ratio, passed=ratio <= ratio_limit)


def dense_instance(n, seed=None, density=0.5, p=0.1):
    '''
    A single-round square nest with n detection events covering the given
    fraction of its balls
    '''
    side = max(2, int(math.ceil(math.sqrt(n/density))))
    nest = nmn.build_nest(lx=side, ly=side, rounds=1, stick_classes=nmd.default_stick_classes(p=p, diagonals=False))
    rng = nmu.make_rng(seed)
    balls = np.sort(rng.choice(nest.n_balls, size=n, replace=False))
    events = [nmn.DetectionEvent(int(b), 0) for b in balls]
    return nest, events


def worst_case_scaling(ns=(50, 100, 200, 400), seed=1, density=0.5, slope_limit=2.2):
    '''
    Total matching time and operation count on dense instances of increasing
    size, with the log-log slope of each against n.

    Returns:
        objdict with df, time_slope, ops_slope and passed
    '''
    rows = []
    for n, trial_seed in zip(ns, nmu.spawn_seeds(seed, len(ns))):
        nest, events = dense_instance(n, seed=trial_seed, density=density)
        elapsed, ops = _time_matching(nest, events)
        rows.append(dict(n=n, total_time=elapsed, ops=ops))
    df = pd.DataFrame(rows)
    logn = np.log(df.n.to_numpy(dtype=float))
    time_slope = float(np.polyfit(logn, np.log(np.maximum(df.total_time.to_numpy(dtype=float), 1e-9)), 1)[0])
    ops_slope = float(np.polyfit(logn, np.log(df.ops.to_numpy(dtype=float)), 1)[0])
    return sc.objdict(df=df, time_slope=time_slope, ops_slope=ops_slope, passed=time_slope <= slope_limit)
