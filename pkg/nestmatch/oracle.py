'''
Independent checks of the matcher: brute-force minimum-weight matching over
all pairings, an LP certificate checker, and exhaustive path and metric checks
for small nests.
'''

import math
import numpy as np
import pandas as pd
import sciris as sc
import numba as nb
import networkx as nx
from . import utils as nmu
from . import defaults as nmd
from . import base as nmb
from . import nest as nmn
from . import matcher as nmm


__all__ = ['Certificate', 'brute_force_mwpm', 'check_certificate', 'check_triangle', 'exhaustive_path_weight',
           'check_matching_against_oracle']


#%% Brute-force matching

@nb.njit(cache=True)
def _subset_dp(D, b): # pragma: no cover
    '''
    Minimum matching weight of every subset of vertices: the lowest vertex in a
    subset either matches the boundary or pairs with another member.
    '''
    n = len(b)
    full = 1 << n
    f = np.full(full, np.inf)
    f[0] = 0.0
    for mask in range(1, full):
        i = 0
        while not (mask >> i) & 1:
            i += 1
        rest = mask & ~(1 << i)
        best = b[i] + f[rest]
        for j in range(i+1, n):
            if (rest >> j) & 1:
                cost = D[i, j] + f[rest & ~(1 << j)]
                if cost < best:
                    best = cost
        f[mask] = best
    return f


def _as_weights(events, weights):
    ''' Accept either a nest or (D, b) arrays '''
    if isinstance(weights, nmn.Nest):
        balls = [e.ball if isinstance(e, nmn.DetectionEvent) else int(e) for e in events]
        return nmn.distance_matrix(weights, balls)
    D, b = weights
    return np.asarray(D, dtype=np.float64), np.asarray(b, dtype=np.float64)


def brute_force_mwpm(events, weights, limit=None):
    '''
    Globally minimum-weight perfect matching with boundary, by dynamic
    programming over all subsets of events. Among optimal matchings, each
    vertex takes the boundary if it can, and otherwise the lowest partner.

    Args:
        events  (list): DetectionEvents or ball ids
        weights (Nest or tuple): the nest, or a (D, b) pair of pairwise and boundary weights
        limit   (int): largest number of events to enumerate (default 20)

    Returns:
        (Matching, weight)

    **Example**::

        matching, weight = nm.brute_force_mwpm(events, nest)
    '''
    limit = nmd.max_brute if limit is None else limit
    n = len(events)
    if n > limit:
        raise nmu.EnumerationLimitError(n, limit)
    if n == 0:
        return nmm.Matching(), 0.0
    D, b = _as_weights(events, weights)
    f = _subset_dp(D, b)
    mask = (1 << n) - 1
    if not np.isfinite(f[mask]):
        errormsg = 'No perfect matching exists: some events cannot reach each other or the boundary'
        raise nmu.NoPathError(errormsg)

    pairs, pair_weights, boundary, boundary_weights = [], [], [], []
    while mask:
        i = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << i)
        if b[i] + f[rest] == f[mask]:
            boundary.append(i)
            boundary_weights.append(b[i])
            mask = rest
            continue
        for j in range(i+1, n):
            if (rest >> j) & 1 and D[i, j] + f[rest & ~(1 << j)] == f[mask]:
                pairs.append((i, j))
                pair_weights.append(D[i, j])
                mask = rest & ~(1 << j)
                break
        else: # pragma: no cover
            errormsg = f'Could not reconstruct the optimal matching at subset {mask:b}'
            raise nmu.InvariantError(errormsg)
    matching = nmm.Matching(pairs, boundary, pair_weights, boundary_weights)
    return matching, matching.total_weight


#%% Certificates

class Certificate(nmb.FlexPretty):
    '''
    Result of checking a matching and a dual assignment against the LP
    optimality conditions. Each entry of ``checks`` is True if that condition
    holds; ``diagnostics`` says where each failing condition failed.
    '''

    def __init__(self, primal, dual, n, eps, checks, diagnostics):
        self.primal = primal
        self.dual = dual
        self.gap = primal - dual
        self.n = n
        self.eps = eps
        self.checks = checks
        self.diagnostics = diagnostics
        return

    @property
    def valid(self):
        return bool(all(self.checks.values()))

    def summary(self):
        ''' One line: primal=<w> dual=<w> gap=<g> valid=<bool> '''
        return f'primal={nmu.fmt_float(self.primal)} dual={nmu.fmt_float(self.dual)} gap={nmu.fmt_float(self.gap)} valid={str(self.valid).lower()}'

    def _brief(self):
        failed = [k for k,v in self.checks.items() if not v]
        return f'Certificate(valid={self.valid}; gap={self.gap:.3g}; failed={failed})'


def check_certificate(matching, duals, nest, events, eps=None):
    '''
    Check a matching and dual state against the LP optimality conditions, over
    the complete set of event-event and event-boundary edges.

    Conditions checked: every event matched exactly once; every dual set odd and
    the family laminar; duals non-negative; no edge overpaid; every matched edge
    tight; every set with positive dual crossed by exactly one matched edge; and
    primal minus dual within n times the tolerance.

    Args:
        matching (Matching): the matching, over event indices
        duals   (DualState): every set with its dual value
        nest         (Nest): the nest
        events       (list): the DetectionEvents
        eps         (float): tolerance (default: the nest's)

    Returns:
        Certificate
    '''
    n = len(events)
    eps = nest.eps if eps is None else eps
    checks = sc.objdict(perfect=True, odd_sets=True, laminar=True, nonnegative=True, feasible=True,
                        tight=True, one_crossing=True, gap=True)
    diagnostics = []
    def fail(key, msg):
        checks[key] = False
        diagnostics.append(f'{key}: {msg}')

    if n == 0:
        if len(matching):
            fail('perfect', 'matching refers to events on an empty instance')
        dual = duals.objective if len(duals) else 0.0
        return Certificate(matching.total_weight if len(matching) else 0.0, dual, 0, eps, checks, diagnostics)

    D, b = nmn.distance_matrix(nest, [e.ball for e in events])
    finite = D[np.isfinite(D)]
    scale = max([1.0, float(finite.max()) if finite.size else 0.0, float(b[np.isfinite(b)].max(initial=0.0))])
    tol = eps + 64*np.finfo(float).eps*scale # Round-off in summed distances

    # Perfect matching
    covered = np.zeros(n, dtype=np.int64)
    for a, c in matching.pairs:
        if not (0 <= a < n and 0 <= c < n) or a == c:
            fail('perfect', f'pair ({a}, {c}) is not a pair of distinct events')
            continue
        covered[a] += 1
        covered[c] += 1
    for v in matching.boundary_matches:
        if not 0 <= v < n:
            fail('perfect', f'boundary match {v} is not an event')
            continue
        covered[v] += 1
    if (covered != 1).any():
        bad = np.flatnonzero(covered != 1)[:10].tolist()
        fail('perfect', f'events {bad} are not matched exactly once')
    primal = math.fsum([D[a, c] for a, c in matching.pairs if 0 <= a < n and 0 <= c < n] +
                       [b[v] for v in matching.boundary_matches if 0 <= v < n])

    # Dual sets
    k = len(duals.sets)
    M = np.zeros((k, n), dtype=np.int64)
    for i, members in enumerate(duals.sets):
        members = np.asarray(members, dtype=np.int64)
        if len(members) == 0 or members.min() < 0 or members.max() >= n:
            fail('odd_sets', f'set {i} has members outside 0..{n-1}')
            continue
        M[i, members] = 1
    sizes = M.sum(axis=1)
    even = np.flatnonzero(sizes % 2 == 0)
    if len(even):
        fail('odd_sets', f'sets {even[:10].tolist()} have an even number of members')
    overlap = M @ M.T
    smaller = np.minimum.outer(sizes, sizes)
    clash = ~((overlap == 0) | (overlap == smaller))
    if clash.any():
        i, j = np.argwhere(clash)[0]
        fail('laminar', f'sets {i} and {j} overlap without one containing the other')
    y = duals.y
    negative = np.flatnonzero(y < -tol)
    if len(negative):
        fail('nonnegative', f'sets {negative[:10].tolist()} have negative duals')

    # Edge feasibility
    r = M.T @ y
    shared = (M.T * y) @ M
    slack = D - r[:, None] - r[None, :] + 2*shared
    np.fill_diagonal(slack, np.inf)
    over = np.argwhere(slack < -tol)
    if len(over):
        i, j = over[0]
        fail('feasible', f'edge ({i}, {j}) is overpaid by {-slack[i, j]:.3g}')
    bslack = b - r
    over = np.flatnonzero(bslack < -tol)
    if len(over):
        fail('feasible', f'boundary edge of {over[0]} is overpaid by {-bslack[over[0]]:.3g}')

    # Complementary slackness
    for a, c in matching.pairs:
        if 0 <= a < n and 0 <= c < n and a != c and abs(slack[a, c]) > tol:
            fail('tight', f'matched edge ({a}, {c}) has slack {slack[a, c]:.3g}')
    for v in matching.boundary_matches:
        if 0 <= v < n and abs(bslack[v]) > tol:
            fail('tight', f'boundary match of {v} has slack {bslack[v]:.3g}')
    crossings = np.zeros(k, dtype=np.int64)
    for a, c in matching.pairs:
        if 0 <= a < n and 0 <= c < n:
            crossings += M[:, a] ^ M[:, c]
    for v in matching.boundary_matches:
        if 0 <= v < n:
            crossings += M[:, v]
    uncovered = np.flatnonzero(crossings < 1)
    if len(uncovered):
        fail('one_crossing', f'sets {uncovered[:10].tolist()} are crossed by no matched edge')
    multiple = np.flatnonzero((y > eps) & (crossings != 1))
    if len(multiple):
        fail('one_crossing', f'sets {multiple[:10].tolist()} have positive duals but {crossings[multiple[0]]} crossing matched edges')

    dual = duals.objective
    if abs(primal - dual) > n*tol:
        fail('gap', f'primal {primal!r} and dual {dual!r} differ by more than {n}×{tol:.3g}')

    return Certificate(primal, dual, n, eps, checks, diagnostics)


#%% Metric and path checks

def check_triangle(nest, triples=None, n_samples=1000, seed=None):
    '''
    Check the triangle inequality w_ik <= w_ij + w_jk on ball triples.

    Args:
        nest      (Nest): the nest
        triples   (list): explicit (i, j, k) ball triples; if None, sample them
        n_samples (int):  number of triples to sample
        seed      (int):  sampling seed

    Returns:
        objdict with n_checked, violations (list of triples) and passed
    '''
    if triples is None:
        rng = nmu.make_rng(seed)
        triples = rng.integers(0, nest.n_balls, size=(n_samples, 3))
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    balls, inverse = np.unique(triples, return_inverse=True)
    inverse = inverse.reshape(-1, 3)
    D, _ = nmn.distance_matrix(nest, balls)
    np.fill_diagonal(D, 0.0)
    i, j, k = inverse[:,0], inverse[:,1], inverse[:,2]
    lhs = D[i, k]
    rhs = D[i, j] + D[j, k]
    bad = np.flatnonzero(np.isfinite(rhs) & (lhs > rhs + nest.eps))
    violations = [tuple(int(v) for v in triples[t]) for t in bad]
    return sc.objdict(n_checked=len(triples), violations=violations, passed=not violations)


def exhaustive_path_weight(nest, a, b, limit=12):
    '''
    Lightest path weight from ball a to ball b (or the boundary, -1) by
    enumerating every simple path; the boundary may only appear as an endpoint.
    Returns ``nm.NO_PATH`` if there is no path.
    '''
    if nest.n_balls > limit:
        raise nmu.EnumerationLimitError(nest.n_balls, limit)
    G = nest.to_networkx()
    if b != nmd.BOUNDARY and G.has_node(nmd.BOUNDARY):
        G.remove_node(nmd.BOUNDARY)
    if a == b:
        return 0.0
    if not G.has_node(b):
        return nmd.NO_PATH
    weights = [nx.path_weight(G, path, weight='weight') for path in nx.all_simple_paths(G, a, b)]
    return min(weights, default=nmd.NO_PATH)


#%% Differential suite

def _oracle_trial(seed, nest, n_max):
    events = nmn.detection_events(nest, nmn.sample_errors(nest, seed=seed))[:n_max]
    matching, duals, _ = nmm.match_all(nest, events)
    _, oracle_weight = brute_force_mwpm(events, nest)
    cert = check_certificate(matching, duals, nest, events)
    return dict(seed=seed, n_events=len(events), matcher_weight=matching.total_weight, oracle_weight=oracle_weight,
                diff=matching.total_weight - oracle_weight, valid=cert.valid, gap=cert.gap)


def check_matching_against_oracle(nest=None, n_instances=100, n_max=12, seed=1, parallel=False):
    '''
    Match random samples on a nest and compare against the brute-force optimum
    and the certificate checker. Samples with more than n_max events are cut to
    their first n_max events.

    Returns:
        DataFrame with one row per instance
    '''
    if nest is None:
        nest = nmn.build_nest()
    seeds = nmu.spawn_seeds(seed, n_instances)
    if parallel:
        rows = sc.parallelize(_oracle_trial, iterarg=seeds, kwargs=dict(nest=nest, n_max=n_max))
    else:
        rows = [_oracle_trial(s, nest, n_max) for s in seeds]
    return pd.DataFrame(rows)
