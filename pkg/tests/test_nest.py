"""
Test nest construction, error sampling, detection events and path weights.
"""

import numpy as np
import sciris as sc
import nestmatch as nm
import pytest


def ok(string, newline=True):
    ''' Print out a successful test nicely '''
    return sc.printgreen(f'✓ {string}' + '\n'*newline)


def make_chain(n=5, p=0.1, p_boundary=1e-3):
    ''' A line of n balls with a boundary stick at each end '''
    coords = [(i, 0, 0) for i in range(n)]
    sticks = [(i, i+1, p) for i in range(n-1)]
    sticks += [(0, nm.BOUNDARY, p_boundary), (n-1, nm.BOUNDARY, p_boundary)]
    return nm.Nest.from_sticks(coords, sticks)


def test_build():
    sc.heading('Testing nest construction...')

    nest = nm.build_nest()
    pars = nm.lattice_pars()
    assert nest.n_balls == pars['lx']*pars['ly']*pars['rounds'], 'Expected one ball per lattice site'
    assert nest.degree.max() == 12, f'Interior balls of the default nest should have degree 12, not {nest.degree.max()}'
    assert nest.R == 2, f'Default stick classes should give R = 2, not {nest.R}'
    assert np.all(nest.w > 0), 'Stick weights must be positive'
    assert np.allclose(nest.w, -np.log(nest.p)), 'Stick weights must be -log(p)'
    ok(f'Default nest built: {nest.brief(output=True)}')

    b = nest.ball_id(2, 3, 4)
    assert tuple(nest.coords[b]) == (2, 3, 4), 'Ball ids should follow (t, y, x) order'
    assert nest.ball(nm.BOUNDARY).is_virtual_boundary, 'Ball -1 should be the virtual boundary'
    ok('Ball ids and coordinates agree')

    nest = nm.build_nest(lx=3, ly=3, rounds=3, stick_classes=nm.default_stick_classes(p=0.01, time_boundary=True))
    last = nest.coords[:, 2] == 2
    boundary = (nest.dst == nm.BOUNDARY) & (nest.kind == 'time_boundary')
    assert set(nest.src[boundary]) == set(np.flatnonzero(last)), 'Time-boundary sticks should attach to every ball of the final round'
    ok('Time boundary attaches to the final round')

    with pytest.raises(sc.KeyNotFoundError):
        nm.lattice_pars(not_a_key=1)
    with pytest.raises(ValueError):
        nm.build_nest(stick_classes=[dict(kind='space_x', p=1.0)])
    with pytest.raises(ValueError):
        nm.build_nest(b_max=6)
    with pytest.raises(ValueError):
        nm.Nest.from_sticks([(0,0,0), (1,0,0)], [(0, 0, 0.1)])
    ok('Invalid nests are rejected')

    return nest


def test_empty():
    sc.heading('Testing zero-round nests...')

    nest = nm.build_nest(rounds=0)
    assert nest.n_balls == 0 and nest.n_sticks == 0, 'A zero-round nest should be empty'
    sample = nm.sample_errors(nest, seed=1)
    events = nm.detection_events(nest, sample)
    assert len(sample) == 0 and events == [], 'An empty nest has no errors and no events'
    assert nest.eps > 0, 'Tolerance should stay positive on an empty nest'
    ok('Zero-round nest handled')
    return nest


def test_sampling():
    sc.heading('Testing error sampling and detection events...')

    nest = nm.build_nest(lx=6, ly=6, rounds=6, stick_classes=nm.default_stick_classes(p=0.02))
    s1 = nm.sample_errors(nest, seed=3)
    s2 = nm.sample_errors(nest, seed=3)
    s3 = nm.sample_errors(nest, seed=4)
    assert s1 == s2, 'Same seed should give the same sample'
    assert not (s1 == s3), 'Different seeds should give different samples'
    ok(f'Sampling is deterministic ({len(s1)} highlighted sticks)')

    events = nm.detection_events(nest, s1)
    keys = [tuple(nest.coords[e.ball][::-1]) for e in events]
    assert keys == sorted(keys), 'Events should be in (t, y, x) order'
    combined = nm.detection_events(nest, s1 ^ s1)
    assert combined == [], 'A sample combined with itself has no events'
    ok(f'{len(events)} events in streaming order')

    chain = make_chain()
    cases = {
        (0,):   [0, 1],
        (0, 1): [0, 2],
        (4,):   [0], # Boundary stick at ball 0
        ():     [],
    }
    for highlighted, expected in cases.items():
        balls = [e.ball for e in nm.detection_events(chain, nm.ErrorSample(highlighted))]
        assert balls == expected, f'Highlighting {highlighted} should give events {expected}, not {balls}'
    ok('Parity rule checked on a chain')

    df = nm.events_to_df(events)
    assert list(df.columns) == ['ball_id', 't'], 'Unexpected event columns'
    assert nm.events_from_df(df, nest) == events, 'Events should survive a dataframe round trip'
    with pytest.raises(ValueError):
        nm.events_from_df(df.iloc[[0, 0]], nest)
    ok('Event tables checked')

    return events


def test_paths():
    sc.heading('Testing path weights...')

    chain = make_chain()
    w = -np.log(0.1)
    wb = -np.log(1e-3)
    assert np.isclose(nm.path_weight(chain, 0, 2), 2*w), 'Chain distance should be two sticks'
    assert np.isclose(nm.path_weight(chain, 1, nm.BOUNDARY), w + wb), 'Boundary distance should go through the nearest end'
    assert nm.path_weight(chain, 3, 1) == nm.path_weight(chain, 1, 3), 'Path weights should be symmetric'
    assert nm.path_weight(chain, 2, 2) == 0, 'Distance to self should be zero'
    with pytest.raises(ValueError):
        nm.path_weight(chain, nm.BOUNDARY, 1)
    ok('Chain distances correct')

    island = nm.Nest.from_sticks([(0,0,0), (1,0,0), (2,0,0)], [(0, 1, 0.1)])
    assert nm.path_weight(island, 0, 2) == nm.NO_PATH, 'Unreachable balls should be infinitely far'
    assert nm.path_weight(island, 0, nm.BOUNDARY) == nm.NO_PATH, 'No boundary sticks means no boundary path'
    ok('Unreachable targets return NO_PATH')

    nest = nm.build_nest(lx=4, ly=4, rounds=3, stick_classes=nm.default_stick_classes(p=0.01))
    balls = [0, 7, 20, 33, 47]
    D, b = nm.distance_matrix(nest, balls)
    cache = nm.PathCache(nest)
    for i, a in enumerate(balls):
        assert np.isclose(b[i], nm.path_weight(nest, a, nm.BOUNDARY, cache=cache)), f'Boundary distance of ball {a} disagrees'
        for j, c in enumerate(balls):
            assert np.isclose(D[i, j], nm.path_weight(nest, a, c, cache=cache)), f'Distance ({a}, {c}) disagrees'
    ok('Lazy regions agree with scipy Dijkstra')

    region = nm.ExplorationRegion(nest, 0, {})
    covered = region.covered(2*nest.w_min)
    assert 0 in covered and all(region.dist[c] < 2*nest.w_min for c in covered), 'Covered balls must lie inside the radius'
    ok(f'Exploration region covers {len(covered)} balls')

    return D


def test_layered():
    sc.heading('Testing layered nests and round streams...')

    config = dict(lx=4, ly=3, rounds=6, stick_classes=nm.default_stick_classes(p=0.05, time_boundary=True))
    full = nm.build_nest(config)
    layered = nm.LayeredNest(config)
    assert layered.n_balls == full.n_balls and layered.n_sticks == full.n_sticks, 'Layered and explicit nests should have the same size'
    for ball in range(full.n_balls):
        assert layered.neighbors(ball) == full.neighbors(ball), f'Ball {ball} has different neighbors in the layered nest'
    assert np.array_equal(layered.coords_of(range(full.n_balls)), full.coords), 'Coordinates should match the explicit nest'
    assert np.array_equal(layered.balls_in_round(3), full.balls_in_round(3)), 'Round 3 should hold the same balls'
    assert layered.ball_round(full.ball_id(1, 2, 4)) == 4 and layered.ball_id(1, 2, 4) == full.ball_id(1, 2, 4), 'Ball ids should agree'
    assert layered.w_max == full.w_max and layered.eps == full.eps, 'Weights should come from the same stick classes'
    ok(f'{layered.brief(output=True)} matches {full.brief(output=True)}')

    balls = [0, 5, 17, 30, 47, 71]
    D1, b1 = nm.distance_matrix(full, balls)
    D2, b2 = nm.distance_matrix(layered, balls)
    assert np.allclose(D1, D2) and np.allclose(b1, b2), 'Layered distances should match scipy on the explicit nest'
    assert nm.path_weight(layered, 5, 71) == nm.path_weight(full, 5, 71), 'Lazy regions should give identical weights on both nests'
    ok('Distances agree')

    rounds = list(nm.round_stream(layered, seed=5))
    again = list(nm.round_stream(layered, seed=5))
    assert [t for t,_ in rounds] == list(range(6)), 'One batch per round, in order'
    assert rounds == again, 'Same seed should give the same stream'
    assert all(e.round == t and layered.ball_round(e.ball) == t for t, batch in rounds for e in batch), 'Events should sit in their round'

    # The same draws, made stick by stick on the explicit nest, give the same events
    rng = np.random.default_rng(5)
    start = full.coords[full.src, 2]
    highlighted = []
    for t in range(6):
        idx = np.flatnonzero(start == t)
        highlighted += idx[rng.random(len(idx)) < full.p[idx]].tolist()
    events = nm.detection_events(full, nm.ErrorSample(highlighted))
    streamed = [e for _, batch in rounds for e in batch]
    assert sorted(e.ball for e in streamed) == sorted(e.ball for e in events), 'Parity carried between rounds should match a whole-nest sample'
    ok(f'Round stream of {len(streamed)} events matches a whole-nest sample')

    with pytest.raises(ValueError):
        nm.LayeredNest(lx=3, ly=3, rounds=2)
    ok('Layered nests need at least three rounds')

    return layered


def test_export():
    sc.heading('Testing nest export...')
    nest = nm.build_nest(lx=2, ly=2, rounds=2)
    G = nest.to_networkx()
    assert G.has_node(nm.BOUNDARY), 'Boundary should be a node of the networkx graph'
    dfs = nest.to_df()
    assert len(dfs.balls) == nest.n_balls and len(dfs.sticks) == nest.n_sticks, 'Tables should have one row per ball and stick'
    ok('Graph and tables exported')
    return G


if __name__ == '__main__':

    with sc.timer():
        nest   = test_build()
        empty  = test_empty()
        events = test_sampling()
        D      = test_paths()
        layers = test_layered()
        G      = test_export()
