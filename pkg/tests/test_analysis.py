"""
Test the n_av bound, the weight ratio R, cluster statistics and runtime scaling.
"""

import numpy as np
import sciris as sc
import nestmatch as nm
import pytest


def ok(string, newline=True):
    ''' Print out a successful test nicely '''
    return sc.printgreen(f'✓ {string}' + '\n'*newline)


def test_nav():
    sc.heading('Testing the n_av bound...')

    nav = nm.compute_nav(A=1, x=1e-5, b_max=12, R=2)
    assert 0.2 < nav < 0.21, f'Expected n_av of about 0.208 for a 12-degree nest at x=1e-5, not {nav}'
    assert nav < 1, 'Below threshold, fewer than one nearby chain is expected'
    assert np.isclose(nm.compute_nav(nm.NavParams(x=1e-5), both_endpoints=True), 2*nav), 'Counting both endpoints doubles the bound'
    ok(f'n_av = {nav:0.4f}')

    rng = np.random.default_rng(1)
    for i in range(20):
        b_max = int(rng.integers(2, 13))
        R = int(rng.integers(1, 4))
        x = float(rng.uniform(0.01, 0.5))/b_max**R
        A = float(rng.uniform(0.1, 2))
        closed = nm.compute_nav(A=A, x=x, b_max=b_max, R=R)
        direct = nm.nav_double_sum(A=A, x=x, b_max=b_max, R=R)
        assert np.isclose(closed, direct, rtol=1e-8), f'Closed form {closed} and double sum {direct} disagree for A={A}, x={x}, b_max={b_max}, R={R}'
    ok('Closed form matches the double sum on 20 random parameter sets')

    slow = dict(A=1.5, x=0.9/12**2, b_max=12, R=2) # Ratio 0.9: hundreds of terms before the tail is small
    full = nm.nav_double_sum(**slow)
    for max_terms in [0, 1, 5, 50]:
        short = nm.nav_double_sum(max_terms=max_terms, **slow)
        assert np.isclose(short, full, rtol=1e-9), f'Capping the sum at {max_terms} terms gives {short}, not {full}'
    assert np.isclose(full, nm.compute_nav(**slow), rtol=1e-8), 'Slowly converging sum should still match the closed form'
    ok('Capped sums add the geometric tail and keep their value')

    with pytest.raises(nm.DomainError):
        nm.compute_nav(x=1e-2, b_max=12, R=2)
    with pytest.raises(nm.DomainError):
        nm.nav_double_sum(x=0)
    with pytest.raises(nm.DomainError):
        nm.compute_nav(A=-1)
    ok('Divergent and invalid parameters raise DomainError')

    return nav


def test_R():
    sc.heading('Testing the weight ratio R...')

    assert nm.compute_R(nm.build_nest()) == 2, 'Default stick classes give R = 2'
    uniform = nm.build_nest(stick_classes=nm.default_stick_classes(p=0.01, diagonals=False))
    assert nm.compute_R(uniform) == 1, 'Equal weights give R = 1'
    wide = nm.Nest.from_sticks([(0,0,0), (1,0,0)], [(0, 1, 0.1), (0, -1, 1e-3)])
    assert nm.compute_R(wide) == 3, f'Weights differing by a factor of 3 give R = 3, not {nm.compute_R(wide)}'
    with pytest.raises(nm.DomainError):
        nm.compute_R(nm.build_nest(rounds=0))
    ok('R computed for uniform, default and custom nests')


def test_clusters():
    sc.heading('Testing cluster statistics...')

    chain = nm.Nest.from_sticks([(i,0,0) for i in range(5)], [(0,1,0.1), (1,2,0.1), (3,4,0.1), (4,-1,0.1)])
    sizes = sorted(nm.cluster_sizes(chain, [0, 1, 2, 3]).tolist())
    assert sizes == [2, 2], f'Two separate pairs of sticks expected, not {sizes}'
    sizes = nm.cluster_sizes(chain, [3])
    assert sizes.tolist() == [1], 'A lone boundary stick is a cluster of one'
    ok('Cluster sizes correct on a chain')

    nest = nm.build_nest(lx=8, ly=8, rounds=8, stick_classes=nm.default_stick_classes(p=0.01))
    empty = nm.cluster_stats(nest, p=0, trials=5, fit=False)
    assert empty.n_clusters == 0 and len(empty.to_df()) == 0, 'p = 0 should give an empty histogram'
    ok('p = 0 gives no clusters')

    hist = nm.cluster_stats(nest, trials=200, seed=3)
    again = nm.cluster_stats(nest, trials=200, seed=3)
    assert np.array_equal(hist.counts, again.counts), 'Same seed should give the same histogram'
    assert hist.counts[1] > hist.counts[2] > 0, 'Isolated sticks should dominate at low p'
    surv = hist.survival()
    assert surv[1] == 1 and np.all(np.diff(surv) <= 0), 'Survival should start at 1 and never increase'
    expected = nm.expected_isolated(nest)
    observed = hist.counts[1]/hist.n_samples
    assert abs(observed - expected)/expected < 0.1, f'Isolated sticks per sample {observed} far from the expected {expected}'
    ok(f'{hist.n_clusters} clusters over {hist.n_samples} samples; {observed:0.2f} isolated per sample vs {expected:0.2f} expected')

    if np.isfinite(hist.x_fit):
        assert 0 < hist.x_fit < 1, f'Cluster counts should decay with size, not grow (x_fit={hist.x_fit})'
    combined = hist + again
    assert combined.n_samples == 400 and combined.n_clusters == 2*hist.n_clusters, 'Histograms should pool'
    ok(f'Decay fit: {hist.fit_summary()}')

    return hist


def test_scaling():
    sc.heading('Testing runtime scaling...')

    res = nm.runtime_scaling(Ls=[3, 4], p=0.02, trials=2, seed=1, ratio_limit=1e9, verbose=0)
    assert list(res.df.columns) == ['L', 'n_events', 'total_time', 'time_per_event', 'ops_per_event'], 'Unexpected scaling columns'
    assert res.passed and len(res.df) == 2, 'Scaling check should run for both sizes'
    ok(f'Scaling table:\n{res.df}')

    worst = nm.worst_case_scaling(ns=[6, 12], seed=1)
    assert np.isfinite(worst.ops_slope) and worst.ops_slope > 0, 'Operations should grow with the number of events'
    nest, events = nm.dense_instance(10, seed=2)
    assert len(events) == 10 and len({e.ball for e in events}) == 10, 'Dense instances have distinct events'
    ok(f'Dense instances: ops slope {worst.ops_slope:0.2f}')

    return res


if __name__ == '__main__':

    with sc.timer():
        nav  = test_nav()
        test_R()
        hist = test_clusters()
        res  = test_scaling()
