'''
Serial blossom matcher with a boundary vertex, operating directly on a nest.

Edges are never built explicitly: each outer vertex grows an exploration region
through the nest, and the region's hits (other detection events and the boundary)
are the candidate edges, with weights equal to shortest-path distances. The
boundary is always unmatched; a vertex matched to it behaves as an unmatched
node for augmentation.
'''

import math
import numpy as np
import pandas as pd
import sciris as sc
from dataclasses import dataclass, field
from .settings import options as nmo
from . import utils as nmu
from . import defaults as nmd
from . import base as nmb
from . import nest as nmn


__all__ = ['BlossomNode', 'GrowthEdge', 'DualDelta', 'StageRecord', 'RepairRecord', 'Matching', 'DualState',
           'BlossomForest', 'Matcher', 'match_all', 'match_stream']


#%% Small records

@dataclass(frozen=True)
class GrowthEdge:
    ''' A tight edge from a vertex in an outer node to a vertex, or to the boundary (-1) '''
    source: int
    target: int
    slack: float = 0.0


@dataclass(frozen=True)
class DualDelta:
    ''' The amount by which outer duals grew (and inner duals shrank), and what limited it '''
    delta: float
    reason: str
    node: object = None


@dataclass
class StageRecord:
    ''' Trace of one augmentation: which vertices took part and what it cost '''
    root: int
    vertices: list
    balls: list
    ops: dict
    cost: int
    dissolved: list = field(default_factory=list)


@dataclass
class RepairRecord:
    ''' Vertices returned to the unmatched state when a new vertex arrived inside an existing region '''
    trigger: int
    vertices: list


#%% Blossom structure

class BlossomNode:
    '''
    A node of the matching problem: either a single vertex, or a blossom formed
    from an odd cycle of child nodes. For a blossom, children[0] holds the base,
    edges[i] joins children[i] to children[(i+1) % k] as (vertex in children[i],
    vertex in children[i+1]), and the edges at odd positions are the matched ones.

    Tree fields are only set while the node is top-level and in the current
    alternating tree: tree_edge is (vertex in this node, vertex in the tree parent).
    '''

    def __init__(self, kind, vertex=None, children=None, edges=None, y=0.0, id=None):
        self.kind = kind
        self.vertex = vertex
        self.children = children or []
        self.edges = edges or []
        self.y = y
        self.id = id
        self.parent = None
        self.base = vertex
        self.label = None
        self.tree_parent = None
        self.tree_edge = None
        self.tree_children = []
        return

    def __repr__(self):
        if self.kind == 'vertex':
            return f'BlossomNode(vertex={self.vertex}, y={self.y:.6g}, label={self.label})'
        return f'BlossomNode(blossom={self.id}, size={len(self.children)}, y={self.y:.6g}, label={self.label})'

    @property
    def is_blossom(self):
        return self.kind == 'blossom'

    def vertices(self):
        ''' All vertices contained in this node, in cycle order '''
        if self.kind == 'vertex':
            return [self.vertex]
        out = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.kind == 'vertex':
                out.append(node.vertex)
            else:
                stack.extend(reversed(node.children))
        return out

    def clear_tree(self):
        self.label = None
        self.tree_parent = None
        self.tree_edge = None
        self.tree_children = []
        return


#%% Results

class Matching(nmb.FlexPretty):
    '''
    A perfect matching of detection events, with boundary matches.

    Args:
        pairs    (list): (a, b) event-index pairs, a < b
        boundary (list): event indices matched to the boundary
        pair_weights     (list): implicit edge weight of each pair
        boundary_weights (list): boundary distance of each boundary-matched event
    '''

    def __init__(self, pairs=None, boundary=None, pair_weights=None, boundary_weights=None):
        pairs = [tuple(sorted((int(a), int(b)))) for a,b in (pairs or [])]
        pair_weights = list(pair_weights) if pair_weights is not None else [np.nan]*len(pairs)
        order = sorted(range(len(pairs)), key=lambda i: pairs[i])
        self.pairs = [pairs[i] for i in order]
        self.pair_weights = [float(pair_weights[i]) for i in order]
        boundary = [int(v) for v in (boundary or [])]
        boundary_weights = list(boundary_weights) if boundary_weights is not None else [np.nan]*len(boundary)
        order = sorted(range(len(boundary)), key=lambda i: boundary[i])
        self.boundary_matches = [boundary[i] for i in order]
        self.boundary_weights = [float(boundary_weights[i]) for i in order]
        return

    @property
    def total_weight(self):
        ''' Correctly rounded sum of all matched weights '''
        return math.fsum(self.pair_weights + self.boundary_weights)

    @property
    def n_events(self):
        return 2*len(self.pairs) + len(self.boundary_matches)

    def __len__(self):
        return len(self.pairs) + len(self.boundary_matches)

    def mates(self, n=None):
        ''' Array of partners per event: another event index, -1 for the boundary, -2 if unmatched '''
        n = self.n_events if n is None else n
        mates = np.full(n, nmd.UNMATCHED, dtype=np.int64)
        for a,b in self.pairs:
            mates[a] = b
            mates[b] = a
        for v in self.boundary_matches:
            mates[v] = nmd.BOUNDARY
        return mates

    def rows(self):
        ''' (a, b, weight) rows in a canonical order, with b = -1 for boundary matches '''
        rows = [(a, b, w) for (a,b),w in zip(self.pairs, self.pair_weights)]
        rows += [(v, nmd.BOUNDARY, w) for v,w in zip(self.boundary_matches, self.boundary_weights)]
        return sorted(rows, key=lambda row: (row[0], row[1]))

    def to_df(self, events=None):
        '''
        Matching as a dataframe with columns event_a,event_b,weight. With events,
        the columns hold ball ids; boundary matches have event_b = BOUNDARY.
        '''
        ident = (lambda v: events[v].ball) if events is not None else (lambda v: v)
        data = []
        for a,b,w in self.rows():
            data.append(dict(event_a=ident(a), event_b=nmd.boundary_label if b == nmd.BOUNDARY else ident(b), weight=w))
        return pd.DataFrame(data, columns=nmd.matching_cols)

    def to_csv(self, filename, events=None):
        df = self.to_df(events)
        df.to_csv(filename, index=False, sep=nmo.sep, float_format=f'%.{nmo.precision}g')
        return filename

    @classmethod
    def from_df(cls, df, events):
        ''' Rebuild a matching from a dataframe written by to_df(events) '''
        missing = [c for c in nmd.matching_cols if c not in df.columns]
        if missing:
            errormsg = f'Matching table is missing column(s) {missing}; expected {nmd.matching_cols}'
            raise ValueError(errormsg)
        index = {e.ball:i for i,e in enumerate(events)}
        pairs, pw, boundary, bw = [], [], [], []
        for a, b, w in zip(df['event_a'], df['event_b'], df['weight']):
            try:
                a = index[int(a)]
                if str(b) == nmd.boundary_label:
                    boundary.append(a)
                    bw.append(float(w))
                else:
                    pairs.append((a, index[int(b)]))
                    pw.append(float(w))
            except (KeyError, ValueError) as E:
                errormsg = f'Matching row ({a}, {b}) does not refer to known detection events'
                raise ValueError(errormsg) from E
        return cls(pairs, boundary, pw, bw)

    def _brief(self):
        return f'Matching(pairs={len(self.pairs)}; boundary={len(self.boundary_matches)}; weight={self.total_weight:.6g})'


class DualState(nmb.FlexPretty):
    '''
    Dual values of every live set: one per vertex plus one per blossom at any
    nesting level. Members are event indices.
    '''

    def __init__(self, sets=None, y=None, eps=None):
        self.sets = [tuple(sorted(int(v) for v in s)) for s in (sets or [])]
        self.y = np.array(y if y is not None else [], dtype=np.float64)
        self.eps = eps
        return

    @property
    def objective(self):
        return math.fsum(self.y.tolist())

    def __len__(self):
        return len(self.sets)

    def copy(self):
        return DualState(list(self.sets), self.y.copy(), self.eps)

    def to_dict(self, events=None):
        ident = (lambda v: events[v].ball) if events is not None else (lambda v: v)
        sets = [dict(members=[ident(v) for v in s], y=float(y)) for s,y in zip(self.sets, self.y)]
        return dict(sets=sets, eps=self.eps)

    def to_json(self, filename, events=None):
        ''' Write {"sets": [{"members": [...], "y": ...}], "eps": ...}; members are ball ids if events are given '''
        return sc.savejson(filename=filename, obj=self.to_dict(events))

    @classmethod
    def from_dict(cls, data, events=None):
        if 'sets' not in data:
            errormsg = 'Dual dump must contain a "sets" list'
            raise ValueError(errormsg)
        index = {e.ball:i for i,e in enumerate(events)} if events is not None else None
        sets, y = [], []
        for entry in data['sets']:
            members = entry['members']
            if index is not None:
                try:
                    members = [index[int(m)] for m in members]
                except KeyError as E:
                    errormsg = f'Dual set {members} refers to a ball with no detection event'
                    raise ValueError(errormsg) from E
            sets.append(members)
            y.append(float(entry['y']))
        return cls(sets, y, data.get('eps'))

    @classmethod
    def from_json(cls, filename, events=None):
        return cls.from_dict(sc.loadjson(filename), events)

    def _brief(self):
        return f'DualState(sets={len(self.sets)}; objective={self.objective:.6g})'


class BlossomForest(nmb.FlexPretty):
    ''' The laminar family of blossoms left at termination, as nested dicts '''

    def __init__(self, roots=None):
        self.roots = roots or []
        return

    @classmethod
    def from_nodes(cls, nodes):
        def describe(node):
            return dict(id=node.id, y=node.y, vertices=sorted(node.vertices()),
                        children=[describe(c) for c in node.children if c.is_blossom])
        return cls([describe(node) for node in nodes])

    @property
    def n_blossoms(self):
        count = 0
        stack = list(self.roots)
        while stack:
            entry = stack.pop()
            count += 1
            stack.extend(entry['children'])
        return count

    @property
    def depth(self):
        def depth(entry):
            return 1 + max([depth(c) for c in entry['children']], default=0)
        return max([depth(r) for r in self.roots], default=0)

    def _brief(self):
        return f'BlossomForest(blossoms={self.n_blossoms}; depth={self.depth})'


#%% The matcher

class Matcher(nmb.FlexPretty):
    '''
    Blossom algorithm with a boundary vertex over a nest's implicit edges. Each
    operation of the algorithm is a method; run() drives them until every vertex
    is matched. Vertices can be appended between runs with add_events().

    Args:
        nest    (Nest): the nest the events live on
        events  (list): DetectionEvents (or ball ids), in (t, y, x) order
        debug   (bool): validate every invariant after each primitive (default nm.options.debug)
        verbose (float): 0 silent, 1 summary, 2 one line per augmentation

    **Example**::

        matcher = nm.Matcher(nest, events)
        matching, duals, forest = matcher.run()
    '''

    def __init__(self, nest, events=None, debug=None, verbose=0):
        self.nest = nest
        self.eps = nest.eps
        self.debug = nmo.debug if debug is None else debug
        self.verbose = verbose
        self.events = []
        self.balls = []
        self.nodes = []
        self.mate = []
        self.blossoms = {}
        self.cache = nmn.PathCache(nest)
        self.tree = []
        self.root = None
        self.root_vertex = None
        self.cover = {}       # Ball -> [(vertex, distance)] for vertices whose radius reaches past it
        self.cover_r = {}     # Vertex -> radius indexed so far
        self.cover_balls = {} # Vertex -> balls indexed for it
        self.pointer = 0
        self.ops = dict.fromkeys(nmd.op_names, 0)
        self.stages = []
        self.repairs = []
        self._next_blossom = 0
        self._version = 0
        self._scanned = None
        self._stage_start = None
        if events:
            self.add_events(events)
        return


    def _brief(self):
        matched = sum(m != nmd.UNMATCHED for m in self.mate)
        return f'Matcher(vertices={len(self.mate)}; matched={matched}; blossoms={len(self.blossoms)}; stages={len(self.stages)})'


    #%% Structure helpers

    @property
    def n(self):
        return len(self.nodes)

    def top(self, v):
        ''' Top-level node containing vertex v '''
        node = self.nodes[v]
        while node.parent is not None:
            node = node.parent
        return node

    def radius(self, v):
        ''' Sum of the duals of every set containing v '''
        node = self.nodes[v]
        r = 0.0
        while node is not None:
            r += node.y
            node = node.parent
        return r

    def _shared(self, u, v):
        ''' Sum of the duals of the sets containing both u and v '''
        ancestors = set()
        node = self.nodes[u].parent
        while node is not None:
            ancestors.add(id(node))
            node = node.parent
        shared = 0.0
        node = self.nodes[v].parent
        while node is not None:
            if id(node) in ancestors:
                shared += node.y
            node = node.parent
        return shared

    def slack(self, u, v):
        ''' Slack of the implicit edge (u, v); v may be the boundary '''
        if v == nmd.BOUNDARY:
            return self.cache.boundary_distance(self.balls[u]) - self.radius(u)
        d = self.cache.distance(self.balls[u], self.balls[v])
        return d - self.radius(u) - self.radius(v) + 2*self._shared(u, v)

    def _child_containing(self, node, v):
        child = self.nodes[v]
        while child.parent is not node:
            child = child.parent
        return child

    def _touch(self, op=None):
        if op is not None:
            self.ops[op] += 1
        self._version += 1
        if self.debug:
            self.validate()
        return


    #%% Vertex arrival

    def add_events(self, events):
        '''
        Append vertices. Matched structure is kept and new vertices start unmatched
        with y = 0. If a new vertex lies strictly inside an existing vertex's
        region (so that the edge between them would be overpaid), the top-level
        node of that vertex and of its partner are dissolved back to unmatched
        singletons with y = 0; each dissolution is recorded in self.repairs.

        Returns:
            The list of vertices that were dissolved
        '''
        if self.tree:
            errormsg = 'Events can only be added between stages, not while an alternating tree exists'
            raise nmu.InvariantError(errormsg)
        start = self.n
        new_balls = []
        for event in events:
            if not isinstance(event, nmn.DetectionEvent):
                event = nmn.DetectionEvent(int(event), self.nest.ball_round(int(event)))
            if event.ball in self.cache.targets:
                errormsg = f'Ball {event.ball} already hosts a detection event'
                raise ValueError(errormsg)
            v = len(self.nodes)
            self.events.append(event)
            self.balls.append(event.ball)
            self.nodes.append(BlossomNode('vertex', vertex=v))
            self.mate.append(nmd.UNMATCHED)
            new_balls.append(event.ball)
        self.cache.add_targets(new_balls, start)

        dissolved = []
        for v in range(start, self.n):
            for t, d in list(self.cover.get(self.balls[v], [])):
                if t < start and d - self.radius(t) < -self.eps:
                    vertices = self._dissolve(self.top(t))
                    self.repairs.append(RepairRecord(v, vertices))
                    dissolved.extend(vertices)
        self.pointer = min([self.pointer, start] + dissolved)
        self._touch()
        return sorted(dissolved)


    def _dissolve(self, node):
        ''' Return a top-level node and its partner's node to unmatched singletons with zero duals '''
        partner = self.mate[node.base]
        nodes = [node]
        if partner >= 0:
            nodes.append(self.top(partner))
        vertices = []
        for top in nodes:
            stack = [top]
            while stack:
                n = stack.pop()
                if n.is_blossom:
                    self.blossoms.pop(n.id, None)
                    stack.extend(n.children)
                else:
                    vertices.append(n.vertex)
                    self._uncover(n.vertex)
                    n.y = 0.0
                    n.parent = None
                    n.base = n.vertex
                    n.clear_tree()
                    self.mate[n.vertex] = nmd.UNMATCHED
        return sorted(vertices)


    #%% Algorithm steps

    def select_root(self):
        ''' Lowest-index unmatched vertex, or None when every vertex is matched '''
        while self.pointer < self.n and self.mate[self.pointer] != nmd.UNMATCHED:
            self.pointer += 1
        return self.pointer if self.pointer < self.n else None


    def _start_tree(self, v):
        node = self.nodes[v]
        node.clear_tree()
        node.label = nmd.OUTER
        self.root = node
        self.root_vertex = v
        self.tree = [node]
        self._stage_start = (dict(self.ops), self.cache.total_steps)
        self._touch()
        return


    def _cover(self, v):
        '''
        Index the balls lying strictly inside vertex v's radius: cover[ball] lists
        (vertex, distance) for every vertex whose radius has reached past that
        ball. Entries go only when v is dissolved, so the index may still list
        balls that v has since shrunk away from.
        '''
        r = self.radius(v)
        done = self.cover_r.get(v, 0.0)
        if r <= done:
            return
        own = self.balls[v]
        region = self.cache.region(own)
        added = self.cover_balls.setdefault(v, [])
        for d, ball in region.shell(done, r):
            if ball == own or ball == self.nest.n_balls:
                continue
            self.cover.setdefault(ball, []).append((v, d))
            added.append(ball)
        self.cover_r[v] = r
        return


    def _uncover(self, v):
        ''' Drop vertex v from the coverage index '''
        for ball in self.cover_balls.pop(v, []):
            entries = [entry for entry in self.cover[ball] if entry[0] != v]
            if entries:
                self.cover[ball] = entries
            else:
                del self.cover[ball]
        self.cover_r.pop(v, None)
        return


    def _scan(self):
        '''
        Walk the balls around every vertex u of an outer node, in order of
        distance. At a ball x the candidates are the vertex whose event sits on
        x, the boundary if x is the boundary node, and every vertex t whose
        radius covers x; the path u -> x -> t bounds the distance from u to t.
        Some ball on the shortest path to a t with slack s lies within
        s + r(u) + w_max of u, so the walk stops once d - r(u) - w_max is above
        both the tolerance and twice the best increase found so far. Collect the
        tight edges plus the smallest dual increase that would create one.
        '''
        if self._scanned is not None and self._scanned[0] == self._version:
            return self._scanned[1]
        eps = self.eps
        w_max = self.nest.w_max
        boundary = self.nest.n_balls
        targets = self.cache.targets
        bound = np.inf
        best = (np.inf, None, None)
        tight = []
        for node in self.tree:
            if node.label != nmd.OUTER:
                continue
            for u in node.vertices():
                ru = self.radius(u)
                found = {} # Candidate -> (path length, slack, reason)
                for d, x in self.cache.region(self.balls[u]).iter_balls():
                    lb = d - ru - w_max
                    if lb > eps and lb > 2*bound:
                        break
                    if x == boundary:
                        candidates = [(nmd.BOUNDARY, 0.0)]
                    else:
                        candidates = self.cover.get(x, [])
                        if x in targets:
                            candidates = candidates + [(targets[x], 0.0)]
                    for t, a in candidates:
                        dist = d + a
                        if t in found and found[t][0] <= dist:
                            continue
                        if t == nmd.BOUNDARY:
                            slack, reason = dist - ru, 'boundary'
                        else:
                            target = self.top(t)
                            if target is node or target.label == nmd.INNER:
                                continue
                            slack = dist - ru - self.radius(t)
                            reason = 'outer' if target.label == nmd.OUTER else 'edge'
                        found[t] = (dist, slack, reason)
                        bound = min(bound, slack/2 if reason == 'outer' else slack)
                for t, (dist, slack, reason) in found.items():
                    eff = slack/2 if reason == 'outer' else slack
                    if slack <= eps:
                        tight.append((t, u, slack))
                    if eff < best[0]:
                        best = (eff, reason, (u, t))
        result = sc.objdict(tight=sorted(tight), best=best)
        self._scanned = (self._version, result)
        return result


    def find_growth_edge(self):
        '''
        A tight edge from an outer node to the boundary, a non-tree node, or another
        outer node; inner targets are ignored. Ties go to the lowest target id, with
        the boundary (-1) first, then the lowest source. Returns None if there is none.
        '''
        tight = self._scan().tight
        if not tight:
            return None
        t, u, slack = tight[0]
        return GrowthEdge(u, t, slack)


    def _zero_inner_blossom(self):
        zeros = [node for node in self.tree if node.label == nmd.INNER and node.is_blossom and node.y <= 0]
        return min(zeros, key=lambda node: node.id) if zeros else None


    def adjust_duals(self):
        '''
        Grow every outer node's dual and shrink every inner node's dual by the
        largest amount that keeps every edge feasible and every dual non-negative.
        Edges to non-tree targets limit the change by their slack, edges between
        two outer nodes by half their slack, and inner nodes by their own dual.

        Returns:
            DualDelta
        '''
        best_eff, reason, where = self._scan().best
        delta = best_eff
        limiting = where
        for node in self.tree:
            if node.label == nmd.INNER and node.y < delta:
                delta = node.y
                reason = 'inner_blossom' if node.is_blossom else 'inner_vertex'
                limiting = node
        if not np.isfinite(delta):
            errormsg = f'Vertex {self.root.base} cannot reach any other detection event or the boundary'
            raise nmu.NoPathError(errormsg)
        if delta <= 0 and reason == 'inner_vertex':
            errormsg = f'Dual adjustment stalled on inner vertex {limiting.vertex} with no growth edge available'
            raise nmu.InvariantError(errormsg)
        delta = max(delta, 0.0)
        for node in self.tree:
            if node.label == nmd.OUTER:
                node.y += delta
            elif node is limiting:
                node.y = 0.0
            else:
                node.y = max(node.y - delta, 0.0)
        for node in self.tree:
            if node.label == nmd.OUTER:
                for u in node.vertices():
                    self._cover(u)
        self._touch('adjust')
        return DualDelta(delta, reason, limiting)


    def grow_tree(self, edge):
        ''' Add the matched target node as inner and its partner as outer '''
        u, t = edge.source, edge.target
        source = self.top(u)
        target = self.top(t)
        partner = self.mate[target.base]
        if target.label is not None or partner < 0:
            errormsg = f'Cannot grow onto node containing {t}: it must be matched to another vertex and outside the tree'
            raise nmu.InvariantError(errormsg)
        mate_node = self.top(partner)
        target.label = nmd.INNER
        target.tree_parent = source
        target.tree_edge = (t, u)
        target.tree_children = [mate_node]
        source.tree_children.append(target)
        mate_node.label = nmd.OUTER
        mate_node.tree_parent = target
        mate_node.tree_edge = (partner, target.base)
        mate_node.tree_children = []
        self.tree.extend([target, mate_node])
        self._touch('grow')
        return


    def make_blossom(self, edge):
        '''
        Collapse the odd cycle formed by a tight edge between two outer nodes of the
        tree, through their lowest common ancestor, into a new outer blossom with y = 0.

        Returns:
            The new BlossomNode
        '''
        u, v = edge.source, edge.target
        U, V = self.top(u), self.top(v)
        if U is V or U.label != nmd.OUTER or V.label != nmd.OUTER:
            errormsg = f'Blossom edge ({u}, {v}) must join two different outer nodes of the tree'
            raise nmu.InvariantError(errormsg)

        def path_to_root(node):
            path = [node]
            while path[-1].tree_parent is not None:
                path.append(path[-1].tree_parent)
            return path

        path_u = path_to_root(U)
        path_v = path_to_root(V)
        if path_u[-1] is not path_v[-1]:
            errormsg = f'Blossom edge ({u}, {v}) joins two different trees'
            raise nmu.InvariantError(errormsg)
        on_u = {id(n) for n in path_u}
        ancestor = next(n for n in path_v if id(n) in on_u)
        path_u = path_u[:path_u.index(ancestor)+1]
        path_v = path_v[:path_v.index(ancestor)+1]

        children = list(reversed(path_u)) + path_v[:-1]
        edges = []
        for child in reversed(path_u[:-1]): # Down from the ancestor to U
            x, y = child.tree_edge
            edges.append((y, x))
        edges.append((u, v))
        for child in path_v[:-1]: # Up from V to the ancestor
            edges.append(child.tree_edge)
        if len(children) % 2 == 0 or len(children) < 3:
            errormsg = f'Blossom cycle has {len(children)} nodes; cycles must be odd with at least 3 nodes'
            raise nmu.InvariantError(errormsg)

        blossom = BlossomNode('blossom', children=children, edges=edges, y=0.0, id=self._next_blossom)
        self._next_blossom += 1
        blossom.base = ancestor.base
        blossom.label = nmd.OUTER
        blossom.tree_parent = ancestor.tree_parent
        blossom.tree_edge = ancestor.tree_edge
        in_cycle = {id(c) for c in children}
        for child in children:
            for grandchild in child.tree_children:
                if id(grandchild) not in in_cycle:
                    grandchild.tree_parent = blossom
                    blossom.tree_children.append(grandchild)
        if ancestor.tree_parent is not None:
            siblings = ancestor.tree_parent.tree_children
            siblings[siblings.index(ancestor)] = blossom
        for child in children:
            child.parent = blossom
            child.clear_tree()
        self.tree = [n for n in self.tree if id(n) not in in_cycle] + [blossom]
        if id(self.root) in in_cycle:
            self.root = blossom
        self.blossoms[blossom.id] = blossom
        self._touch('blossom')
        return blossom


    def expand_blossom(self, blossom):
        '''
        Replace an inner blossom with y = 0 by its children. The children on the
        even-length path from the entry child to the base child stay in the tree
        with alternating inner/outer labels; the others leave the tree, still
        matched in pairs.
        '''
        if not blossom.is_blossom or blossom.label != nmd.INNER or blossom.y > self.eps or blossom.parent is not None:
            errormsg = f'Only top-level inner blossoms with zero dual can be expanded, not {blossom}'
            raise nmu.InvariantError(errormsg)
        children, edges = blossom.children, blossom.edges
        k = len(children)
        parent = blossom.tree_parent
        entry_vertex = blossom.tree_edge[0]
        outer_child = blossom.tree_children[0]
        j = children.index(self._child_containing(blossom, entry_vertex))

        # Path from the entry child to the base child, with each child's edge to its predecessor
        path = [children[j]]
        links = [blossom.tree_edge]
        if j % 2 == 0:
            for i in range(j, 0, -1):
                path.append(children[i-1])
                x, y = edges[i-1] # x in children[i-1], y in children[i]
                links.append((x, y))
        else:
            for i in range(j, k):
                path.append(children[(i+1) % k])
                x, y = edges[i] # x in children[i], y in children[i+1]
                links.append((y, x))

        for child in children:
            child.parent = None
            child.clear_tree()
        prev = parent
        for pos, (child, link) in enumerate(zip(path, links)):
            child.label = nmd.INNER if pos % 2 == 0 else nmd.OUTER
            child.tree_parent = prev
            child.tree_edge = link
            if prev is not parent:
                prev.tree_children.append(child)
            prev = child
        base_child = path[-1]
        base_child.tree_children = [outer_child]
        outer_child.tree_parent = base_child
        siblings = parent.tree_children
        siblings[siblings.index(blossom)] = path[0]

        self.tree = [n for n in self.tree if n is not blossom] + path
        del self.blossoms[blossom.id]
        self._touch('expand')
        return


    def _rebase(self, node, v):
        ''' Rotate the matching inside a node so that vertex v becomes its base '''
        if not node.is_blossom:
            return
        child = self._child_containing(node, v)
        j = node.children.index(child)
        self._rebase(child, v)
        children, edges = node.children, node.edges
        k = len(children)
        if j % 2 == 1:
            flips = range(j+1, k, 2) # Forward around the cycle to the old base
        else:
            flips = range(j-2, -1, -2) # Backward to the old base
        for i in flips:
            x, y = edges[i]
            self._rebase(self._child_containing(node, x), x)
            self._rebase(self._child_containing(node, y), y)
            self.mate[x] = y
            self.mate[y] = x
        node.children = children[j:] + children[:j]
        node.edges = edges[j:] + edges[:j]
        node.base = v
        return


    def augment(self, edge):
        '''
        Flip matched and unmatched edges along the path from the root to the
        target, which is the boundary, an unmatched node, or a boundary-matched
        node (whose boundary edge is dropped). The tree is then destroyed; blossoms
        are kept.
        '''
        u, t = edge.source, edge.target
        if t == nmd.BOUNDARY:
            partner = nmd.BOUNDARY
            extra = []
        else:
            target = self.top(t)
            if target.label is not None or self.mate[target.base] >= 0:
                errormsg = f'Cannot augment into node containing {t}: it must be unmatched or boundary-matched and outside the tree'
                raise nmu.InvariantError(errormsg)
            self._rebase(target, t)
            self.mate[t] = u
            partner = t
            extra = target.vertices()

        node, v, p = self.top(u), u, partner
        while True:
            self._rebase(node, v)
            self.mate[v] = p
            if node.tree_parent is None:
                break
            inner = node.tree_parent
            x, y = inner.tree_edge
            self._rebase(inner, x)
            self.mate[x] = y
            node, v, p = inner.tree_parent, y, x

        self.ops['augment'] += 1
        self._finish_stage(extra)
        self._touch()
        return


    def _finish_stage(self, extra):
        ''' Record the stage, then destroy the tree and release its regions '''
        vertices = sorted({v for node in self.tree for v in node.vertices()} | set(extra))
        balls = {self.balls[v] for v in vertices}
        for node in self.tree:
            if node.label == nmd.OUTER:
                for u in node.vertices():
                    if self.balls[u] in self.cache.regions:
                        balls.update(self.cache.region(self.balls[u]).covered(self.radius(u)))
        balls.discard(self.nest.n_balls)
        ops0, steps0 = self._stage_start
        ops = {k: self.ops[k] - ops0[k] for k in nmd.op_names}
        ops['region'] = self.cache.total_steps - steps0
        self.ops['region'] += ops['region']
        record = StageRecord(root=self.root_vertex, vertices=vertices, balls=sorted(balls), ops=ops, cost=int(sum(ops.values())))
        self.stages.append(record)
        if self.verbose >= 2:
            print(f'  Stage {len(self.stages)}: root {record.root}, {len(vertices)} vertices, cost {record.cost}')
        released = [self.balls[v] for node in self.tree for v in node.vertices()]
        for node in self.tree:
            node.clear_tree()
        self.tree = []
        self.root = None
        self.cache.release(released)
        return


    def step(self):
        ''' Perform one primitive operation of the current stage '''
        edge = self.find_growth_edge()
        if edge is None:
            blossom = self._zero_inner_blossom()
            if blossom is not None:
                self.expand_blossom(blossom)
                return 'expand'
            self.adjust_duals()
            return 'adjust'
        if edge.target == nmd.BOUNDARY:
            self.augment(edge)
            return 'augment'
        target = self.top(edge.target)
        if target.label == nmd.OUTER:
            self.make_blossom(edge)
            return 'blossom'
        if self.mate[target.base] < 0:
            self.augment(edge)
            return 'augment'
        self.grow_tree(edge)
        return 'grow'


    def run(self):
        '''
        Match every vertex, one alternating tree at a time.

        Returns:
            (Matching, DualState, BlossomForest)
        '''
        T = sc.timer()
        while True:
            root = self.select_root()
            if root is None:
                break
            self._start_tree(root)
            while self.tree:
                self.step()
        if self.verbose >= 1:
            print(f'Matched {self.n} events in {len(self.stages)} stages ({T.toc(output=True):0.2f} s)')
        return self.results()


    #%% Outputs

    def matching(self):
        pairs, pair_weights, boundary, boundary_weights = [], [], [], []
        for v, m in enumerate(self.mate):
            if m == nmd.BOUNDARY:
                boundary.append(v)
                boundary_weights.append(self.cache.boundary_distance(self.balls[v]))
                self.cache.release([self.balls[v]])
            elif m > v:
                a, b = sorted((self.balls[v], self.balls[m]))
                pairs.append((v, m))
                pair_weights.append(self.cache.distance(a, b))
                self.cache.release([a])
        return Matching(pairs, boundary, pair_weights, boundary_weights)

    def duals(self):
        sets = [(v,) for v in range(self.n)]
        y = [node.y for node in self.nodes]
        for bid in sorted(self.blossoms):
            blossom = self.blossoms[bid]
            sets.append(tuple(blossom.vertices()))
            y.append(blossom.y)
        return DualState(sets, y, eps=self.eps)

    def forest(self):
        tops = [b for b in self.blossoms.values() if b.parent is None]
        return BlossomForest.from_nodes(sorted(tops, key=lambda b: b.id))

    def results(self):
        return self.matching(), self.duals(), self.forest()

    @property
    def trace(self):
        ''' Operation counters, per-stage records and repairs '''
        return sc.objdict(ops=dict(self.ops), stages=self.stages, repairs=self.repairs)


    #%% Validation

    def validate(self):
        '''
        Check the matcher invariants: duals non-negative, every edge feasible,
        mates symmetric, matched and tree edges tight, blossom cycles odd and
        tight, and unmatched vertices outside the tree at zero dual. Raises
        InvariantError on the first violation.
        '''
        tol = 4*self.eps
        def fail(msg):
            raise nmu.InvariantError(msg)

        in_tree = {id(n) for n in self.tree}
        for node in self.nodes + list(self.blossoms.values()):
            if node.y < -tol:
                fail(f'Dual of {node} is negative')
        for v, m in enumerate(self.mate):
            if m >= 0 and self.mate[m] != v:
                fail(f'Mates are not symmetric: {v} -> {m} -> {self.mate[m]}')
            if m >= 0 and abs(self.slack(v, m)) > tol:
                fail(f'Matched edge ({v}, {m}) has slack {self.slack(v, m):.3e}')
            if m == nmd.BOUNDARY and abs(self.slack(v, m)) > tol:
                fail(f'Boundary match of {v} has slack {self.slack(v, m):.3e}')
            if m == nmd.UNMATCHED:
                top = self.top(v)
                if id(top) not in in_tree and self.nodes[v].y != 0:
                    fail(f'Unmatched vertex {v} outside the tree has nonzero dual {self.nodes[v].y}')

        # Edge feasibility: all pairs for small problems, otherwise the discovered edges
        if self.n <= 64:
            edges = [(u, v) for u in range(self.n) for v in range(u+1, self.n)]
        else:
            edges = []
            for ball, region in self.cache.regions.items():
                u = self.cache.targets.get(ball)
                if u is not None:
                    edges += [(u, t) for _, t in region.hits if t != nmd.BOUNDARY]
        for u in range(self.n):
            s = self.slack(u, nmd.BOUNDARY)
            if s < -tol:
                fail(f'Boundary edge of {u} is overpaid: slack {s:.3e}')
        for u, v in edges:
            s = self.slack(u, v)
            if s < -tol:
                fail(f'Edge ({u}, {v}) is overpaid: slack {s:.3e}')

        for node in self.tree:
            if node.tree_edge is not None and abs(self.slack(*node.tree_edge)) > tol:
                fail(f'Tree edge {node.tree_edge} is not tight')
        for blossom in self.blossoms.values():
            if len(blossom.children) % 2 == 0 or len(blossom.children) < 3:
                fail(f'Blossom {blossom.id} has an even or short cycle')
            for i, (x, y) in enumerate(blossom.edges):
                if abs(self.slack(x, y)) > tol:
                    fail(f'Blossom {blossom.id} cycle edge ({x}, {y}) is not tight')
                if i % 2 == 1 and self.mate[x] != y:
                    fail(f'Blossom {blossom.id} cycle edge ({x}, {y}) should be matched')
        return True


#%% Functional interface

def match_all(nest, events, debug=None, verbose=0):
    '''
    Minimum-weight perfect matching of detection events, where any event may
    match the boundary.

    Args:
        nest   (Nest): the nest the events were derived from
        events (list): DetectionEvents in (t, y, x) order
        debug  (bool): validate invariants after every primitive

    Returns:
        (Matching, DualState, BlossomForest)

    **Example**::

        nest = nm.build_nest()
        events = nm.detection_events(nest, nm.sample_errors(nest, seed=1))
        matching, duals, forest = nm.match_all(nest, events)
    '''
    return Matcher(nest, events, debug=debug, verbose=verbose).run()


def match_stream(nest, events, debug=None, verbose=0, return_matcher=False):
    '''
    Match events as they arrive, one round at a time: each round's events are
    appended to the existing problem and matching resumes from the previous state.

    Returns:
        (Matching, DualState, BlossomForest), plus the Matcher if return_matcher
    '''
    matcher = Matcher(nest, debug=debug, verbose=verbose)
    by_round = sc.objdict()
    for event in events:
        by_round.setdefault(str(event.round), []).append(event)
    for key in sorted(by_round.keys(), key=int):
        matcher.add_events(by_round[key])
        matcher.run()
    results = matcher.results()
    if return_matcher:
        return results + (matcher,)
    return results
