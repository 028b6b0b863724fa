"""
Define defaults for use throughout nestmatch
"""

import numpy as np
import sciris as sc


#%% Global defaults
BOUNDARY    = -1      # Target id of the single logical boundary vertex
UNMATCHED   = -2      # Mate value of an unmatched vertex
NO_PATH     = np.inf  # Result of a path query with no connecting path
OUTER       = 'outer'
INNER       = 'inner'
eps_factor  = 1e-9    # Tightness tolerance, relative to the smallest stick weight
b_max       = 12      # Maximum ball degree for a surface-code-like nest
p_max       = 1.0     # Exclusive upper bound on stick probabilities
max_brute   = 20      # Largest instance the brute-force oracle will enumerate
nav_tol     = 1e-10   # Relative tail used to truncate the n_av double sum
min_fit_obs = 5       # Minimum observations per cluster size for the decay fit


#%% Nest geometry

# Interior stick classes and the (dx, dy, dt) offset from a ball to its forward neighbor
stick_offsets = sc.objdict(
    space_x = (1, 0, 0),
    space_y = (0, 1, 0),
    time    = (0, 0, 1),
    diag_xy = (1, 1, 0),
    diag_xt = (1, 0, 1),
    diag_yt = (0, 1, 1),
)

# Sticks with a single real endpoint
boundary_kinds = sc.autolist(
    'boundary',       # Spacelike boundary at the x = 0 and x = lx-1 faces
    'time_boundary',  # Final round to the time boundary; off unless configured
)

stick_kinds = list(stick_offsets.keys()) + list(boundary_kinds)
diagonal_kinds = [k for k in stick_offsets.keys() if k.startswith('diag')]


def default_stick_classes(p=1e-3, diagonal_ratio=0.25, diagonals=True, time_boundary=False):
    '''
    Surface-code-like stick classes: spacelike, timelike and boundary sticks share
    probability p, diagonals use p*diagonal_ratio. With the defaults every interior
    ball has degree 12 and the weight ratio ceiling R is 2.

    Args:
        p              (float): probability of the non-diagonal sticks
        diagonal_ratio (float): probability ratio of the diagonal sticks
        diagonals      (bool):  whether to include the space-time diagonals
        time_boundary  (bool):  whether the final round also attaches to the boundary

    **Example**::

        classes = nm.default_stick_classes(p=0.005)
    '''
    classes = [dict(kind=kind, p=p) for kind in ['space_x', 'space_y', 'time', 'boundary']]
    if diagonals:
        classes += [dict(kind=kind, p=p*diagonal_ratio) for kind in diagonal_kinds]
    if time_boundary:
        classes.append(dict(kind='time_boundary', p=p))
    return classes


#%% Matcher operations, each charged one tick by the parallel cost model
op_names = sc.autolist(
    'adjust',   # Dual adjustment
    'grow',     # Tree growth
    'blossom',  # Blossom formation
    'expand',   # Blossom expansion
    'augment',  # Augmentation
    'region',   # One ball settled by a region expansion
)


#%% File formats
ball_cols      = ['ball_id', 'x', 'y', 't']
stick_cols     = ['src', 'dst', 'p', 'w']
event_cols     = ['ball_id', 't']
matching_cols  = ['event_a', 'event_b', 'weight']
histogram_cols = ['size', 'count']
metrics_cols   = ['round', 'events', 'mean_backlog', 'max_backlog', 'stalls', 'messages', 'repairs', 'spills']
scaling_cols   = ['L', 'n_events', 'total_time', 'time_per_event', 'ops_per_event']
boundary_label = 'BOUNDARY'
