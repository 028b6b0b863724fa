'''
Command-line interface: seeded end-to-end runs that write CSV and JSON outputs.

Subcommands:

    simulate      sample errors on a nest, match them, and certify the result
                  writes events.csv (ball_id,t), matching.csv (event_a,event_b,weight),
                  duals.json, certificate.txt and config.json
    match         match the events in an events CSV; writes matching.csv and duals.json
    verify        check a matching CSV and duals JSON against the events; prints
                  primal=<w> dual=<w> gap=<g> valid=<bool>
    parallel-sim  simulate the patch grid; writes metrics.csv
                  (round,events,mean_backlog,max_backlog,stalls,messages,repairs,spills),
                  matching.csv and summary.json
    analyze       cluster-size statistics; writes histogram.csv (size,count) and fit.json
    bench         matching time across lattice sizes; writes scaling.csv
                  (L,n_events,total_time,time_per_event,ops_per_event)

Exit codes: 0 success, 1 usage or input error, 2 invariant or certificate failure.
Boundary matches are written with event_b = BOUNDARY.
'''

import os
import sys
import argparse
import pandas as pd
import sciris as sc
from .settings import options as nmo
from . import version as nmv
from . import utils as nmu
from . import defaults as nmd
from . import parameters as nmp
from . import nest as nmn
from . import matcher as nmm
from . import oracle as nmor
from . import analysis as nma
from . import interventions as nmi
from . import parallel as nmpar


__all__ = ['RunConfig', 'make_parser', 'main', 'cmd_simulate', 'cmd_match', 'cmd_verify', 'cmd_parallel_sim',
           'cmd_analyze', 'cmd_bench']


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2


class UsageError(ValueError):
    ''' Raised for malformed command lines, so they exit with code 1 instead of argparse's 2 '''
    pass


class RunConfig(sc.prettyobj):
    '''
    Everything needed to reproduce a run: the lattice parameters, the
    subcommand's own parameters, the master seed and the output directory.

    Args:
        lattice (dict): lattice parameters (see ``nm.lattice_pars()``)
        params  (dict): subcommand parameters
        seed    (int):  master seed; overrides the lattice seed
        out     (str):  output directory
    '''

    def __init__(self, lattice=None, params=None, seed=None, out='.'):
        lattice = sc.mergedicts(lattice)
        if seed is not None:
            lattice['seed'] = int(seed)
        self.lattice = nmp.lattice_pars(**lattice)
        self.params = sc.mergedicts(params)
        self.seed = int(self.lattice['seed'])
        self.out = out
        return

    def to_dict(self):
        return dict(lattice=self.lattice.to_dict(), params=self.params, seed=self.seed, out=self.out)

    def to_json(self, filename):
        return sc.savejson(filename=filename, obj=self.to_dict())

    @classmethod
    def from_dict(cls, data, seed=None, out=None):
        '''
        Accepts either a full RunConfig dict (with a "lattice" entry) or a bare
        dict of lattice parameters
        '''
        data = sc.mergedicts(data)
        if 'lattice' in data:
            unknown = set(data) - {'lattice', 'params', 'seed', 'out'}
            if unknown:
                errormsg = f'Run config keys {sorted(unknown)} not recognized; expected lattice, params, seed, out'
                raise sc.KeyNotFoundError(errormsg)
            seed = data.get('seed') if seed is None else seed
            return cls(data['lattice'], data.get('params'), seed, out or data.get('out', '.'))
        return cls(data, None, seed, out or '.')

    @classmethod
    def from_file(cls, filename=None, seed=None, out=None):
        data = nmp.load_config(filename) if filename else {}
        return cls.from_dict(data, seed=seed, out=out)


#%% Helpers

def _path(config, name):
    return sc.makefilepath(filename=name, folder=config.out, makedirs=True)


def _write_text(filename, text):
    with open(filename, 'w', newline='\n') as f:
        f.write(text + '\n')
    return filename


def _read_csv(filename, what):
    if not filename or not os.path.exists(filename):
        errormsg = f'{what} file "{filename}" does not exist'
        raise FileNotFoundError(errormsg)
    return pd.read_csv(filename, sep=nmo.sep, dtype=str, keep_default_na=False)


def _read_events(filename, nest):
    df = _read_csv(filename, 'Events')
    try:
        df['ball_id'] = df['ball_id'].astype(int)
        df['t'] = df['t'].astype(int)
    except (KeyError, ValueError) as E:
        errormsg = f'Events file "{filename}" must have integer columns {nmd.event_cols}'
        raise ValueError(errormsg) from E
    return nmn.events_from_df(df, nest)


def _report(cert, config, verbose):
    summary = cert.summary()
    _write_text(_path(config, 'certificate.txt'), summary)
    if verbose:
        print(summary)
        for line in cert.diagnostics:
            print(f'  {line}')
    return EXIT_OK if cert.valid else EXIT_INVARIANT


#%% Subcommands

def cmd_simulate(config, verbose=1):
    ''' Sample errors, match the detection events, and certify the matching '''
    nest = nmn.build_nest(config.lattice)
    sample = nmn.sample_errors(nest, seed=config.seed)
    events = nmn.detection_events(nest, sample)
    debug = config.params.get('debug')
    matching, duals, _ = nmm.match_all(nest, events, debug=debug)
    cert = nmor.check_certificate(matching, duals, nest, events)
    nmn.events_to_df(events).to_csv(_path(config, 'events.csv'), index=False, sep=nmo.sep)
    matching.to_csv(_path(config, 'matching.csv'), events)
    duals.to_json(_path(config, 'duals.json'), events)
    config.to_json(_path(config, 'config.json'))
    if verbose:
        print(f'{nest.brief(output=True)}: {len(sample)} errors, {len(events)} detection events')
    return _report(cert, config, verbose)


def cmd_match(config, verbose=1):
    ''' Match the events of an events CSV '''
    nest = nmn.build_nest(config.lattice)
    events = _read_events(config.params.get('events'), nest)
    match = nmm.match_stream if config.params.get('stream') else nmm.match_all
    matching, duals, _ = match(nest, events, debug=config.params.get('debug'))
    cert = nmor.check_certificate(matching, duals, nest, events)
    matching.to_csv(_path(config, 'matching.csv'), events)
    duals.to_json(_path(config, 'duals.json'), events)
    return _report(cert, config, verbose)


def cmd_verify(config, verbose=1):
    ''' Check a matching and dual dump against the events '''
    nest = nmn.build_nest(config.lattice)
    events = _read_events(config.params.get('events'), nest)
    df = _read_csv(config.params.get('matching'), 'Matching')
    matching = nmm.Matching.from_df(df, events)
    duals_file = config.params.get('duals')
    if not duals_file or not os.path.exists(duals_file):
        errormsg = f'Duals file "{duals_file}" does not exist'
        raise FileNotFoundError(errormsg)
    duals = nmm.DualState.from_json(duals_file, events)
    cert = nmor.check_certificate(matching, duals, nest, events)
    return _report(cert, config, verbose)


def cmd_parallel_sim(config, verbose=1):
    ''' Simulate the patch grid and check its matching '''
    params = sc.dcp(config.params)
    check = params.pop('verify', True)
    bursts = params.pop('burst', None) or []
    params['seed'] = config.seed
    params['interventions'] = [nmi.burst(round=r, n_events=n, seed=config.seed) for r, n in bursts] or None
    params.setdefault('verbose', max(0, verbose-1))
    sim = nmpar.ParallelSim(params, label='parallel-sim')
    sim.run()
    sim.to_csv(_path(config, 'metrics.csv'))
    sim.matching.to_csv(_path(config, 'matching.csv'), sim.fed)
    sc.savejson(filename=_path(config, 'summary.json'), obj=sc.jsonify(dict(sim.summary)))
    if verbose:
        print(sim.brief(output=True))
    if check:
        reference, _, _ = nmm.match_all(sim.nest, sim.fed)
        tol = max(len(sim.fed), 1)*sim.nest.eps
        if abs(reference.total_weight - sim.matching.total_weight) > tol:
            print(f'Parallel weight {sim.matching.total_weight!r} differs from serial weight {reference.total_weight!r}', file=sys.stderr)
            return EXIT_INVARIANT
        cert = nmor.check_certificate(sim.matching, sim.matcher.duals(), sim.nest, sim.fed)
        return _report(cert, config, verbose)
    return EXIT_OK


def cmd_analyze(config, verbose=1):
    ''' Cluster-size histogram and exponential decay fit '''
    nest = nmn.build_nest(config.lattice)
    params = config.params
    hist = nma.cluster_stats(nest, p=params.get('p'), trials=int(params.get('trials', 100)), seed=config.seed,
                             parallel=bool(params.get('parallel', False)))
    hist.to_df().to_csv(_path(config, 'histogram.csv'), index=False, sep=nmo.sep)
    fit = hist.fit_summary()
    try:
        fit['n_av'] = nma.compute_nav(A=fit['A_fit'], x=fit['x_fit'], b_max=nest.b_max, R=nest.R)
    except (nmu.DomainError, TypeError):
        fit['n_av'] = None
    sc.savejson(filename=_path(config, 'fit.json'), obj=sc.jsonify(fit))
    if verbose:
        print(hist.brief(output=True))
    return EXIT_OK


def cmd_bench(config, verbose=1):
    ''' Matching time per event across lattice sizes '''
    params = config.params
    res = nma.runtime_scaling(Ls=params.get('Ls', [10, 20, 40, 80]), p=params.get('p', 0.005),
                              trials=int(params.get('trials', 1)), seed=config.seed,
                              ratio_limit=params.get('ratio_limit', 1.5), verbose=verbose)
    res.df.to_csv(_path(config, 'scaling.csv'), index=False, sep=nmo.sep, float_format=f'%.{nmo.precision}g')
    if verbose:
        print(f'Time per event varies by a factor of {res.ratio:0.3f}')
    return EXIT_OK if res.passed else EXIT_INVARIANT


commands = {
    'simulate':     cmd_simulate,
    'match':        cmd_match,
    'verify':       cmd_verify,
    'parallel-sim': cmd_parallel_sim,
    'analyze':      cmd_analyze,
    'bench':        cmd_bench,
}


#%% Argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def _burst(value):
    try:
        r, n = value.split(':')
        return int(r), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f'burst must be ROUND:N_EVENTS, not "{value}"')


def make_parser():
    parser = _Parser(prog='nestmatch', description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--version', action='version', version=f'nestmatch {nmv.__version__}')
    common = _Parser(add_help=False)
    common.add_argument('--config', help='JSON or YAML run config, or a dict of lattice parameters')
    common.add_argument('--seed', type=int, help='master seed (overrides the config)')
    common.add_argument('--out', default=None, help='output directory (default: current directory)')
    common.add_argument('--verbose', type=float, default=None, help='0 silent, 1 summary, 2 detail')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    p = sub.add_parser('simulate', parents=[common], help=cmd_simulate.__doc__)
    p.add_argument('--debug', action='store_true', default=None, help='validate matcher invariants after every step')

    p = sub.add_parser('match', parents=[common], help=cmd_match.__doc__)
    p.add_argument('--events', required=True, help='events CSV with columns ball_id,t')
    p.add_argument('--stream', action='store_true', help='feed events round by round')
    p.add_argument('--debug', action='store_true', default=None)

    p = sub.add_parser('verify', parents=[common], help=cmd_verify.__doc__)
    p.add_argument('--events', required=True, help='events CSV with columns ball_id,t')
    p.add_argument('--matching', required=True, help='matching CSV with columns event_a,event_b,weight')
    p.add_argument('--duals', required=True, help='duals JSON written by simulate or match')

    p = sub.add_parser('parallel-sim', parents=[common], help=cmd_parallel_sim.__doc__)
    p.add_argument('--grid-l', type=int, dest='grid_l')
    p.add_argument('--patch-n', type=int, dest='patch_n')
    p.add_argument('--rounds', type=int)
    p.add_argument('--p', type=float)
    p.add_argument('--history-window', type=int, dest='history_window')
    p.add_argument('--T-q', type=int, dest='T_q', help='ticks per round (default: calibrated as 2*T_c)')
    p.add_argument('--burst', type=_burst, action='append', help='inject N_EVENTS extra events at ROUND, as ROUND:N_EVENTS')
    p.add_argument('--no-verify', action='store_false', dest='verify', help='skip the serial comparison and certificate')

    p = sub.add_parser('analyze', parents=[common], help=cmd_analyze.__doc__)
    p.add_argument('--p', type=float, help='probability for every stick (default: each stick\'s own)')
    p.add_argument('--trials', type=int)
    p.add_argument('--parallel', action='store_true')

    p = sub.add_parser('bench', parents=[common], help=cmd_bench.__doc__)
    p.add_argument('--Ls', type=int, nargs='+')
    p.add_argument('--p', type=float)
    p.add_argument('--trials', type=int)
    p.add_argument('--ratio-limit', type=float, dest='ratio_limit')
    return parser


def main(argv=None):
    '''
    Run the command line; returns the exit code.

    **Example**::

        nestmatch simulate --seed 3 --out results
    '''
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError('a subcommand is required: ' + ', '.join(commands))
        params = {k:v for k,v in vars(args).items() if v is not None and k not in ['command', 'config', 'seed', 'out', 'verbose']}
        config = RunConfig.from_file(args.config, seed=args.seed, out=args.out)
        config.params = sc.mergedicts(config.params, params)
        verbose = nmo.verbose if args.verbose is None else args.verbose
        return commands[args.command](config, verbose=verbose)
    except (nmu.InvariantError, nmu.NoPathError) as E:
        print(f'Invariant failure: {E}', file=sys.stderr)
        return EXIT_INVARIANT
    except (UsageError, ValueError, KeyError, OSError, pd.errors.ParserError) as E:
        print(f'Error: {E}', file=sys.stderr)
        return EXIT_USAGE
