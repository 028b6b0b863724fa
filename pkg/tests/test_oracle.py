"""
Test the brute-force oracle, the certificate checker and the metric checks.
"""

import re
import numpy as np
import sciris as sc
import nestmatch as nm
import pytest


def ok(string, newline=True):
    ''' Print out a successful test nicely '''
    return sc.printgreen(f'✓ {string}' + '\n'*newline)


def test_brute_force():
    sc.heading('Testing the brute-force oracle...')

    matching, weight = nm.brute_force_mwpm([], (np.zeros((0, 0)), np.zeros(0)))
    assert weight == 0 and len(matching) == 0, 'No events should cost nothing'

    matching, weight = nm.brute_force_mwpm([0], (np.zeros((1, 1)), [0.7]))
    assert weight == 0.7 and matching.boundary_matches == [0], 'One event must take the boundary'

    D = np.full((4, 4), 1.0)
    np.fill_diagonal(D, 0)
    matching, weight = nm.brute_force_mwpm(range(4), (D, np.full(4, 0.3)))
    assert np.isclose(weight, 1.2), f'Four cheap boundary matches should cost 1.2, not {weight}'
    assert matching.boundary_matches == [0, 1, 2, 3], 'Every event should take the boundary'

    matching, weight = nm.brute_force_mwpm(range(4), (D, np.full(4, 0.6)))
    assert np.isclose(weight, 2.0) and matching.pairs == [(0, 1), (2, 3)], 'Pairs should win when the boundary is dear'
    ok('Small instances have the expected optima')

    with pytest.raises(nm.EnumerationLimitError):
        nm.brute_force_mwpm(range(21), (np.zeros((21, 21)), np.zeros(21)))
    with pytest.raises(nm.NoPathError):
        nm.brute_force_mwpm([0], (np.zeros((1, 1)), [np.inf]))
    ok('Oversized and infeasible instances are rejected')

    return matching


def test_certificate():
    sc.heading('Testing the certificate checker...')

    nest = nm.build_nest(lx=4, ly=4, rounds=4, stick_classes=nm.default_stick_classes(p=0.05))
    events = nm.detection_events(nest, nm.sample_errors(nest, seed=7))
    assert len(events) >= 2, 'Expected a few events for this seed'
    matching, duals, _ = nm.match_all(nest, events)
    cert = nm.check_certificate(matching, duals, nest, events)
    assert cert.valid, f'Matcher output should certify: {cert.diagnostics}'
    assert abs(cert.gap) <= len(events)*nest.eps*10, f'Gap {cert.gap} should be within tolerance'
    pattern = r'^primal=\S+ dual=\S+ gap=\S+ valid=(true|false)$'
    assert re.match(pattern, cert.summary()), f'Unexpected summary format: {cert.summary()}'
    ok(f'Valid certificate: {cert.summary()}')

    v = int(np.argmax(duals.y[:len(events)])) # Singleton sets come first
    assert duals.y[v] > 0.1, 'Expected some event to carry a sizable dual'

    bad = duals.copy()
    bad.y[v] += 0.1
    cert = nm.check_certificate(matching, bad, nest, events)
    assert not cert.valid and not cert.checks.feasible, 'Raising a dual by 0.1 should overpay the matched edge'
    assert not cert.checks.tight, 'The matched edge should no longer be tight'
    assert cert.summary().endswith('valid=false'), 'Summary should report the failure'
    ok(f'Raised dual caught: {cert.diagnostics[0]}')

    bad = duals.copy()
    bad.y[v] -= 0.1
    cert = nm.check_certificate(matching, bad, nest, events)
    assert cert.checks.feasible and cert.checks.nonnegative, 'Lowering a dual keeps every edge feasible'
    assert not cert.checks.tight and not cert.valid, 'The matched edge of the lowered event should have slack 0.1'
    assert any(d.startswith('tight:') for d in cert.diagnostics), 'Diagnostics should name the tightness failure'
    ok('Lowered dual caught by the tightness check')

    bad = duals.copy()
    bad.sets.append((0, 1))
    bad.y = np.append(bad.y, 0.0)
    cert = nm.check_certificate(matching, bad, nest, events)
    assert not cert.checks.odd_sets, 'An even set should be rejected'
    ok('Even dual set caught')

    if len(matching.pairs):
        short = nm.Matching(matching.pairs[1:], matching.boundary_matches)
    else:
        short = nm.Matching(boundary=matching.boundary_matches[1:])
    cert = nm.check_certificate(short, duals, nest, events)
    assert not cert.checks.perfect and not cert.valid, 'A matching that leaves an event out is not perfect'
    doubled = nm.Matching(matching.pairs, matching.boundary_matches + [v for pair in matching.pairs[:1] for v in pair])
    if len(matching.pairs):
        cert = nm.check_certificate(doubled, duals, nest, events)
        assert not cert.checks.perfect, 'An event matched twice is not perfect'
    ok('Tampered matchings caught')

    cert = nm.check_certificate(nm.Matching(), nm.DualState(), nest, [])
    assert cert.valid and cert.primal == 0 and cert.dual == 0, 'The empty instance certifies trivially'
    ok('Empty instance certified')

    return cert


def test_metric():
    sc.heading('Testing path and metric checks...')

    nest = nm.build_nest(lx=2, ly=2, rounds=2, stick_classes=nm.default_stick_classes(p=0.01))
    cache = nm.PathCache(nest)
    for a in range(nest.n_balls):
        for b in [nm.BOUNDARY] + list(range(nest.n_balls)):
            exact = nm.exhaustive_path_weight(nest, a, b)
            lazy = nm.path_weight(nest, a, b, cache=cache)
            assert np.isclose(exact, lazy), f'Path ({a}, {b}): enumeration gives {exact}, regions give {lazy}'
    ok(f'Path weights agree with enumeration on all {nest.n_balls} balls')

    with pytest.raises(nm.EnumerationLimitError):
        nm.exhaustive_path_weight(nm.build_nest(), 0, 1)

    res = nm.check_triangle(nm.build_nest(), n_samples=300, seed=1)
    assert res.passed and res.n_checked == 300, f'Triangle inequality violated: {res.violations[:5]}'
    ok(f'Triangle inequality holds on {res.n_checked} triples')

    return res


if __name__ == '__main__':

    with sc.timer():
        matching = test_brute_force()
        cert     = test_certificate()
        res      = test_metric()
