"""Interface machinery: the separation event on a rotated rectangular
domain, hole filling, cut-height selection, piecewise-interface extraction
along the dual graph, strip separation and the corridor wall event."""

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import linf_components, linf_diameter


class InterfaceError(Exception):
    """A precondition of the extraction algorithm is violated; carries a
    diagnostic trace."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


def _canonical(a, b):
    return (a, b) if a <= b else (b, a)


# ---------------------------------------------------------------------------
# geometry


class SepGeometry:
    """Rectangular domain of width 2*rho*n and height 2*eta*n around the
    scaled center, oriented along a unit direction w; built from the unit
    squares of the shifted lattice meeting the rectangle.

    Site coordinates are in the lattice frame; u(y) is the height along w
    and v(y) the width coordinate along the right-pointing normal.
    """

    def __init__(self, n, x, r, w, eta, rho):
        if not (0 < eta < rho < r):
            raise ValueError("need 0 < eta < rho < r")
        if not 2 * eta < math.sqrt(r * r - rho * rho):
            raise ValueError("need 2*eta < sqrt(r^2 - rho^2)")
        if abs(x[0]) + r > 0.5 + 1e-12 or abs(x[1]) + r > 0.5 + 1e-12:
            raise ValueError("the ball of radius r around x must fit in the unit square")
        self.n = int(n)
        self.x = (float(x[0]), float(x[1]))
        self.r = float(r)
        norm = math.hypot(w[0], w[1])
        self.w = (w[0] / norm, w[1] / norm)
        self.wp = (self.w[1], -self.w[0])  # right-pointing normal
        self.eta = float(eta)
        self.rho = float(rho)
        # continuum center of the box is at lattice coordinate (n-1)/2
        self.c = (n * (self.x[0] + 0.5) - 0.5, n * (self.x[1] + 0.5) - 0.5)
        self._build()

    # projections (height u along w, width v along wp)
    def u(self, y):
        return (y[0] - self.c[0]) * self.w[0] + (y[1] - self.c[1]) * self.w[1]

    def v(self, y):
        return (y[0] - self.c[0]) * self.wp[0] + (y[1] - self.c[1]) * self.wp[1]

    def square_center(self, sq):
        return (sq[0] + 0.5, sq[1] + 0.5)

    def _square_meets_rectangle(self, i, j):
        """Separating-axis test between the unit square [i,i+1]x[j,j+1]
        and the rectangle |u| <= eta*n, |v| <= rho*n (1e-9 snap)."""
        un, vn = self.eta * self.n, self.rho * self.n
        corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
        us = [self.u(p) for p in corners]
        vs = [self.v(p) for p in corners]
        eps = 1e-9
        if min(us) > un + eps or max(us) < -un - eps:
            return False
        if min(vs) > vn + eps or max(vs) < -vn - eps:
            return False
        # rectangle corners against the square's axes
        rect = []
        for su in (-un, un):
            for sv in (-vn, vn):
                rect.append(
                    (
                        self.c[0] + su * self.w[0] + sv * self.wp[0],
                        self.c[1] + su * self.w[1] + sv * self.wp[1],
                    )
                )
        xs = [p[0] for p in rect]
        ys = [p[1] for p in rect]
        if min(xs) > i + 1 + eps or max(xs) < i - eps:
            return False
        if min(ys) > j + 1 + eps or max(ys) < j - eps:
            return False
        return True

    def _build(self):
        n = self.n
        un, vn = self.eta * n, self.rho * n
        # candidate square range from the rectangle's bounding box
        ext = math.hypot(un, vn) + 2
        i0 = max(0, int(math.floor(self.c[0] - ext)))
        i1 = min(n - 2, int(math.ceil(self.c[0] + ext)))
        j0 = max(0, int(math.floor(self.c[1] - ext)))
        j1 = min(n - 2, int(math.ceil(self.c[1] + ext)))
        squares = set()
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                if self._square_meets_rectangle(i, j):
                    squares.add((i, j))
        if not squares:
            raise ValueError("the rectangle does not meet the box")
        self.squares = frozenset(squares)

        sites = set()
        edges = set()
        edge_count = {}
        for i, j in squares:
            cs = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            sites.update(cs)
            for k in range(4):
                e = _canonical(cs[k], cs[(k + 1) % 4])
                edges.add(e)
                edge_count[e] = edge_count.get(e, 0) + 1
        self.sites = frozenset(sites)
        self.edges = frozenset(edges)
        boundary_edges = {e for e, cnt in edge_count.items() if cnt == 1}

        # walk the boundary circuit
        adj = {}
        for a, b in boundary_edges:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        for s, nb in adj.items():
            if len(nb) != 2:
                raise ValueError("the domain boundary is not a simple circuit")
        start = min(adj)
        cycle = [start]
        prev = None
        cur = start
        while True:
            nb = adj[cur]
            nxt = nb[0] if nb[0] != prev else nb[1]
            if nxt == start:
                break
            cycle.append(nxt)
            prev, cur = cur, nxt
        # orient clockwise in the (v, u) frame: negative shoelace area
        area = 0.0
        for a, b in zip(cycle, cycle[1:] + cycle[:1]):
            area += self.v(a) * self.u(b) - self.v(b) * self.u(a)
        if area > 0:
            cycle.reverse()
        self.boundary_cycle = cycle

        # corner sites: nearest cycle sites to the rectangle corners
        def nearest(su, sv):
            tx = self.c[0] + su * self.w[0] + sv * self.wp[0]
            ty = self.c[1] + su * self.w[1] + sv * self.wp[1]
            return min(cycle, key=lambda s: ((s[0] - tx) ** 2 + (s[1] - ty) ** 2, s))

        self.a_plus = nearest(un, -vn)
        self.b_plus = nearest(un, vn)
        self.b_minus = nearest(-un, vn)
        self.a_minus = nearest(-un, -vn)

        def arc(frm, to):
            i = cycle.index(frm)
            out = [cycle[i]]
            while cycle[i] != to:
                i = (i + 1) % len(cycle)
                out.append(cycle[i])
            return out

        self.top_arc = arc(self.a_plus, self.b_plus)
        self.right_arc = arc(self.b_plus, self.b_minus)
        self.bottom_arc = arc(self.b_minus, self.a_minus)
        self.left_arc = arc(self.a_minus, self.a_plus)

        # dual boundary squares: squares owning a boundary edge of each arc
        def arc_squares(arc_sites):
            arc_edges = {
                _canonical(a, b)
                for a, b in zip(arc_sites, arc_sites[1:])
                if _canonical(a, b) in boundary_edges
            }
            out = set()
            for i, j in squares:
                cs = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
                for k in range(4):
                    if _canonical(cs[k], cs[(k + 1) % 4]) in arc_edges:
                        out.add((i, j))
                        break
            return frozenset(out)

        self.left_dual = arc_squares(self.left_arc)
        self.right_dual = arc_squares(self.right_arc)

        # interior dual adjacency: neighbouring included squares share a
        # primal edge
        dual_edges = {}
        for i, j in squares:
            if (i + 1, j) in squares:
                dual_edges[((i, j), (i + 1, j))] = _canonical((i + 1, j), (i + 1, j + 1))
            if (i, j + 1) in squares:
                dual_edges[((i, j), (i, j + 1))] = _canonical((i, j + 1), (i + 1, j + 1))
        self.dual_edges = dual_edges  # dual pair -> primal edge

        self.site_list = sorted(self.sites)
        self.site_idx = {s: k for k, s in enumerate(self.site_list)}

    def d_plus_sites(self):
        rn = self.r * self.n
        return {
            s
            for s in self.sites
            if self.u(s) >= 0
            and (s[0] - self.c[0]) ** 2 + (s[1] - self.c[1]) ** 2 <= rn * rn
        }

    def d_minus_sites(self):
        rn = self.r * self.n
        return {
            s
            for s in self.sites
            if self.u(s) <= 0
            and (s[0] - self.c[0]) ** 2 + (s[1] - self.c[1]) ** 2 <= rn * rn
        }


def build_sep_geometry(n, x, r, w, eta, rho):
    return SepGeometry(n, x, r, w, eta, rho)


# ---------------------------------------------------------------------------
# clusters of the domain


def _open_in_domain(omega, geom):
    lat = omega.lattice
    out = set()
    for e in geom.edges:
        try:
            if omega.states[lat.edge_id(*e)]:
                out.add(e)
        except ValueError:
            pass  # boundary edges outside the box never open
    return out


def domain_clusters(omega, geom):
    """Open clusters of the configuration restricted to the domain edges;
    returns (site -> cluster id, list of cluster site sets)."""
    parent = {s: s for s in geom.sites}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in _open_in_domain(omega, geom):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra
    comps = {}
    for s in geom.sites:
        comps.setdefault(find(s), set()).add(s)
    clusters = [frozenset(c) for c in sorted(comps.values(), key=lambda c: min(c))]
    label = {}
    for k, c in enumerate(clusters):
        for s in c:
            label[s] = k
    return label, clusters


def crossing_clusters(omega, geom):
    """Clusters connecting the top boundary arc to the bottom one, ordered
    left to right by their leftmost site."""
    label, clusters = domain_clusters(omega, geom)
    top = set(geom.top_arc)
    bot = set(geom.bottom_arc)
    out = [c for c in clusters if (c & top) and (c & bot)]
    out.sort(key=lambda c: min(geom.v(s) for s in c))
    return out


# ---------------------------------------------------------------------------
# Sep check and search


def _sep_bound(geom, delta, theta):
    return math.pi * delta * theta * (geom.n * geom.r) ** 2


def sep_check(omega, geom, partition, delta, theta, filled=None):
    """Does the decomposition (minus clusters, plus clusters) witness the
    separation event?  With `filled`, uses filled site sets instead."""
    cminus, cplus = partition
    cross = crossing_clusters(omega, geom)
    listed = list(cminus) + list(cplus)
    if sorted(map(sorted, listed)) != sorted(map(sorted, cross)):
        raise ValueError("the partition must cover exactly the crossing clusters")
    dp = geom.d_plus_sites()
    dm = geom.d_minus_sites()
    bound = _sep_bound(geom, delta, theta)
    minus_in_plus = sum(len(set(c) & dp) for c in cminus)
    plus_in_minus = sum(len(set(c) & dm) for c in cplus)
    return minus_in_plus <= bound and plus_in_minus <= bound


def sep_search(omega, geom, delta, theta, sigma=None, max_exhaustive=20):
    """A witnessing decomposition of the crossing clusters, or None.

    Exhaustive over the 2^|C| decompositions when |C| is small; otherwise
    falls back to the spin-colouring heuristic (negatively coloured
    clusters on the minus side), which needs sigma."""
    cross = crossing_clusters(omega, geom)
    if not cross:
        return ([], [])
    if len(cross) <= max_exhaustive:
        dp = geom.d_plus_sites()
        dm = geom.d_minus_sites()
        bound = _sep_bound(geom, delta, theta)
        in_plus = [len(c & dp) for c in cross]
        in_minus = [len(c & dm) for c in cross]
        for mask in range(1 << len(cross)):
            s_mp = sum(in_plus[k] for k in range(len(cross)) if (mask >> k) & 1)
            s_pm = sum(in_minus[k] for k in range(len(cross)) if not (mask >> k) & 1)
            if s_mp <= bound and s_pm <= bound:
                cminus = [cross[k] for k in range(len(cross)) if (mask >> k) & 1]
                cplus = [cross[k] for k in range(len(cross)) if not (mask >> k) & 1]
                return (cminus, cplus)
        return None
    if sigma is None:
        raise ValueError("too many crossing clusters for exhaustion; need sigma")
    lat = sigma.lattice
    cminus = []
    cplus = []
    for c in cross:
        site = min(c)
        if sigma.values[lat.site_index[site]] < 0:
            cminus.append(c)
        else:
            cplus.append(c)
    if sep_check(omega, geom, (cminus, cplus), delta, theta):
        return (cminus, cplus)
    return None


# ---------------------------------------------------------------------------
# hole filling


@dataclass(frozen=True)
class FilledCluster:
    base_sites: frozenset
    base_edges: frozenset
    holes: tuple  # ((dual squares, diameter), ...)
    filled_edges: frozenset

    @property
    def filled_sites(self):
        out = set()
        for a, b in self.filled_edges:
            out.add(a)
            out.add(b)
        return out | set(self.base_sites)


def fill_cluster(omega, geom, cluster, M, all_crossing=None):
    """Fill the small holes of a crossing cluster.

    Holes are the connected dual components of the non-cluster edges that
    touch neither the domain boundary nor another crossing cluster; those
    of sup-norm diameter < M are absorbed."""
    cluster = frozenset(cluster)
    open_edges = _open_in_domain(omega, geom)
    e_c = {e for e in open_edges if e[0] in cluster and e[1] in cluster}
    if not e_c and len(cluster) > 1:
        raise ValueError("the given site set is not a cluster of the domain")
    if all_crossing is None:
        all_crossing = crossing_clusters(omega, geom)
    other_sites = set()
    for c in all_crossing:
        if c != cluster:
            other_sites |= set(c)

    # components of the complement dual edge set, connected via shared squares
    comp_edges = [
        (pair, prim) for pair, prim in geom.dual_edges.items() if prim not in e_c
    ]
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for pair, _ in comp_edges:
        for sq in pair:
            parent.setdefault(sq, sq)
    for (s1, s2), _ in comp_edges:
        r1, r2 = find(s1), find(s2)
        if r1 != r2:
            parent[r2] = r1
    comps = {}
    for (pair, prim) in comp_edges:
        comps.setdefault(find(pair[0]), []).append((pair, prim))

    # squares on the outer rim: those owning a boundary edge of the circuit
    rim = set()
    cyc = geom.boundary_cycle
    bedges = {_canonical(a, b) for a, b in zip(cyc, cyc[1:] + cyc[:1])}
    for i, j in geom.squares:
        cs = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        for k in range(4):
            if _canonical(cs[k], cs[(k + 1) % 4]) in bedges:
                rim.add((i, j))
                break

    c_sites = set()
    for a, b in e_c:
        c_sites.add(a)
        c_sites.add(b)

    holes = []
    fill_edges = set(e_c)
    for root, items in sorted(comps.items()):
        sqs = set()
        prims = set()
        for pair, prim in items:
            sqs.update(pair)
            prims.add(prim)
        if sqs & rim:
            continue  # touches the outside: not a hole
        touched = set()
        for a, b in prims:
            touched.add(a)
            touched.add(b)
        if touched & other_sites:
            continue  # not isolated from the other crossing clusters
        diam = linf_diameter(sqs)
        # the inner boundary of a hole consists of open dual edges
        for pair, prim in items:
            if prim[0] in c_sites or prim[1] in c_sites:
                lat = omega.lattice
                assert omega.states[lat.edge_id(*prim)] == 0, (
                    "hole boundary dual edge is closed"
                )
        holes.append((frozenset(sqs), diam))
        if diam < M:
            fill_edges |= prims
    return FilledCluster(
        base_sites=cluster,
        base_edges=frozenset(e_c),
        holes=tuple(sorted(holes, key=lambda h: sorted(h[0]))),
        filled_edges=frozenset(fill_edges),
    )


# ---------------------------------------------------------------------------
# cut heights


@dataclass(frozen=True)
class CutHeights:
    h_plus: float
    h_minus: float
    bad_edges: frozenset  # primal edges
    pi_plus: tuple  # primal edges crossed by the upper line, left to right
    pi_minus: tuple
    pi_hat_plus: tuple  # the dual cut path: square pairs, left to right
    pi_hat_minus: tuple
    delta: float
    budget: float  # (6 delta / eta) n pi r^2, the total bad-edge budget


def _edges_crossing(geom, edges, h):
    out = []
    for e in edges:
        u0, u1 = geom.u(e[0]), geom.u(e[1])
        if min(u0, u1) < h < max(u0, u1):
            out.append(e)
    out.sort(key=lambda e: (geom.v(e[0]) + geom.v(e[1])) / 2.0)
    return out


def _infimum_height(geom, e_set, lo, hi, bound):
    """Infimum h in [lo, hi] with at most `bound` edges of e_set crossed."""
    breaks = sorted(
        {lo, hi}
        | {geom.u(p) for e in e_set for p in e if lo < geom.u(p) < hi}
    )
    for a, b in zip(breaks, breaks[1:]):
        mid = (a + b) / 2.0
        if len(_edges_crossing(geom, e_set, mid)) <= bound:
            return a
    return None


def _nudge_up(geom, e_set, h_star, bound):
    """Midpoint between the infimum and the next site-free half-integer
    ordinate (or the next breakpoint, whichever is closer)."""
    t_star = h_star + geom.c[0] * geom.w[0] + geom.c[1] * geom.w[1]
    k = math.floor(t_star - 0.5)
    t_half = k + 1.5 if k + 0.5 <= t_star else k + 0.5
    while t_half <= t_star + 1e-12:
        t_half += 1.0
    upper = t_half - (geom.c[0] * geom.w[0] + geom.c[1] * geom.w[1])
    nxt = min(
        (geom.u(p) for e in e_set for p in e if geom.u(p) > h_star + 1e-12),
        default=upper,
    )
    upper = min(upper, nxt)
    h = (h_star + upper) / 2.0
    assert len(_edges_crossing(geom, e_set, h)) <= bound
    return h


def select_cut_heights(omega, geom, partition, delta, M, theta=None):
    """Pick the two cut heights and the bad edges they cross.

    The upper height is the infimum over the admissible band of heights
    crossing few enough minus-filled edges, nudged off the lattice sites;
    the lower height is obtained symmetrically."""
    n, eta, r = geom.n, geom.eta, geom.r
    cminus, cplus = partition
    all_cross = crossing_clusters(omega, geom)
    fills_minus = [fill_cluster(omega, geom, c, M, all_cross) for c in cminus]
    fills_plus = [fill_cluster(omega, geom, c, M, all_cross) for c in cplus]
    e_plus = set()
    for f in fills_minus:
        for e in f.filled_edges:
            mid_u = (geom.u(e[0]) + geom.u(e[1])) / 2.0
            if mid_u >= 0:
                e_plus.add(e)
    e_minus = set()
    for f in fills_plus:
        for e in f.filled_edges:
            mid_u = (geom.u(e[0]) + geom.u(e[1])) / 2.0
            if mid_u <= 0:
                e_minus.add(e)
    per_cut = (3.0 * delta / eta) * n * math.pi * r * r
    lo, hi = eta * n / 3.0, 2.0 * eta * n / 3.0
    h_star = _infimum_height(geom, e_plus, lo, hi, per_cut)
    if h_star is None:
        raise InterfaceError("no admissible upper cut height; the separation bound fails")
    h_plus = _nudge_up(geom, e_plus, h_star, per_cut)

    # reflect for the lower cut
    refl = _Reflected(geom)
    h_star_m = _infimum_height(refl, e_minus, lo, hi, per_cut)
    if h_star_m is None:
        raise InterfaceError("no admissible lower cut height; the separation bound fails")
    h_minus = -_nudge_up(refl, e_minus, h_star_m, per_cut)

    pi_plus = tuple(_edges_crossing(geom, geom.edges, h_plus))
    pi_minus = tuple(_edges_crossing(geom, geom.edges, h_minus))
    prim_to_pair = {prim: pair for pair, prim in geom.dual_edges.items()}
    pi_hat_plus = tuple(prim_to_pair[e] for e in pi_plus if e in prim_to_pair)
    pi_hat_minus = tuple(prim_to_pair[e] for e in pi_minus if e in prim_to_pair)
    bad = (e_plus & set(pi_plus)) | (e_minus & set(pi_minus))
    budget = 2 * per_cut
    assert len(bad) <= budget + 1e-9, "bad-edge count exceeds the averaging budget"
    return CutHeights(
        h_plus=h_plus,
        h_minus=h_minus,
        bad_edges=frozenset(bad),
        pi_plus=pi_plus,
        pi_minus=pi_minus,
        pi_hat_plus=pi_hat_plus,
        pi_hat_minus=pi_hat_minus,
        delta=delta,
        budget=budget,
    )


class _Reflected:
    """View of the geometry with the height axis flipped (for the lower cut)."""

    def __init__(self, geom):
        self._g = geom
        self.c = geom.c
        self.w = (-geom.w[0], -geom.w[1])
        self.v = geom.v

    def u(self, y):
        return -self._g.u(y)


# ---------------------------------------------------------------------------
# interface extraction


@dataclass(frozen=True)
class InterfaceResult:
    paths: tuple  # ordered tuples of dual squares
    diams: tuple  # w-diameters (width extents)
    tunnels: tuple  # tuples of primal bad edges traversed
    K: int
    delta: float
    trace: tuple = ()


def _dual_open(omega, geom):
    lat = omega.lattice
    out = set()
    for pair, prim in geom.dual_edges.items():
        if omega.states[lat.edge_id(*prim)] == 0:
            out.add(pair)
    return out


def _dual_components(open_pairs, squares):
    adj = {}
    for a, b in open_pairs:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen = set()
    comps = []
    for s in sorted(squares):
        if s in seen or s not in adj:
            continue
        comp = {s}
        seen.add(s)
        stack = [s]
        while stack:
            cur = stack.pop()
            for t in adj.get(cur, ()):
                if t not in seen:
                    seen.add(t)
                    comp.add(t)
                    stack.append(t)
        comps.append(frozenset(comp))
    return comps


def _diam_w(geom, squares):
    vs = [geom.v(geom.square_center(s)) for s in squares]
    return max(vs) - min(vs) if vs else 0.0


def _tunnel_runs(geom, cuts):
    """Maximal runs of consecutive bad dual edges along each cut path.
    Returns a list of (entry square, exit square, primal edges)."""
    runs = []
    prim_to_pair = {prim: pair for pair, prim in geom.dual_edges.items()}
    for pi in (cuts.pi_plus, cuts.pi_minus):
        duals = [(e, prim_to_pair.get(e)) for e in pi]
        cur = []
        for e, pair in duals:
            if e in cuts.bad_edges and pair is not None:
                cur.append((e, pair))
            else:
                if cur:
                    runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
    out = []
    for run in runs:
        sqs = []
        for _, pair in run:
            for s in pair:
                if s not in sqs:
                    sqs.append(s)
        sqs.sort(key=lambda s: geom.v(geom.square_center(s)))
        out.append((sqs[0], sqs[-1], tuple(e for e, _ in run)))
    return out


def extract_interface(omega, geom, cuts, M, trace=False):
    """Piecewise interface: open dual paths separated by tunnels of bad
    edges along the cut lines, running from the left dual boundary to the
    right one.  The route minimises the number of tunnels used, entering a
    tunnel only at its ends (a tunnel is traversed whole).
    """
    open_pairs = _dual_open(omega, geom)
    adj = {}
    for a, b in open_pairs:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    tunnels = _tunnel_runs(geom, cuts)
    tunnel_moves = {}
    for entry, exit_, prims in tunnels:
        tunnel_moves.setdefault(entry, []).append((exit_, prims))
        tunnel_moves.setdefault(exit_, []).append((entry, prims))

    # Dijkstra with cost = tunnels used; deterministic tie-breaks
    INF = float("inf")
    dist = {}
    prev = {}
    heap = []
    for s in sorted(geom.left_dual):
        dist[s] = 0
        prev[s] = (None, None)
        heapq.heappush(heap, (0, s))
    target = None
    while heap:
        d, s = heapq.heappop(heap)
        if d > dist.get(s, INF):
            continue
        if s in geom.right_dual:
            target = s
            break
        for t in sorted(adj.get(s, ())):
            if d < dist.get(t, INF):
                dist[t] = d
                prev[t] = (s, None)
                heapq.heappush(heap, (d, t))
        for t, prims in tunnel_moves.get(s, ()):
            if d + 1 < dist.get(t, INF):
                dist[t] = d + 1
                prev[t] = (s, prims)
                heapq.heappush(heap, (d + 1, t))
    if target is None:
        raise InterfaceError(
            "no route from the left to the right dual boundary; "
            "the separation precondition is violated",
            trace=["unreachable right boundary"],
        )

    # reconstruct
    route = []
    s = target
    while s is not None:
        p, via = prev[s]
        route.append((s, via))
        s = p
    route.reverse()

    paths = []
    used_tunnels = []
    cur = []
    steps = []
    for s, via in route:
        if via is None:
            cur.append(s)
        else:
            if cur:
                paths.append(tuple(cur))
                steps.append(("open-path", cur[0], cur[-1]))
            used_tunnels.append(tuple(via))
            steps.append(("tunnel", via[0], via[-1]))
            cur = [s]
    if cur:
        paths.append(tuple(cur))
        steps.append(("open-path", cur[0], cur[-1]))

    # postconditions
    total_tunnel = sum(len(t) for t in used_tunnels)
    assert total_tunnel <= cuts.budget + 1e-9, "tunnel budget exceeded"
    diams = tuple(_diam_w(geom, p) for p in paths)
    K = len(paths)
    lower = 2 * geom.n * geom.rho - cuts.budget
    if sum(diams) < lower - 1e-9:
        raise InterfaceError(
            f"total interface width {sum(diams):.3f} below the bound {lower:.3f}",
            trace=steps,
        )
    big = big_dual_clusters(omega, geom, cuts.h_plus, M) | big_dual_clusters(
        omega, geom, cuts.h_minus, M
    )
    if K - 1 > len(big):
        raise InterfaceError(
            f"{K} interface pieces but only {len(big)} big dual clusters at the cuts",
            trace=steps,
        )
    return InterfaceResult(
        paths=tuple(paths),
        diams=diams,
        tunnels=tuple(used_tunnels),
        K=K,
        delta=cuts.delta,
        trace=tuple(steps) if trace else (),
    )


def big_dual_clusters(omega, geom, h, M):
    """Open dual clusters of sup-norm diameter >= M meeting the dual cut
    path at height h, as a set of frozensets of squares."""
    n, eta = geom.n, geom.eta
    band = eta * n / 3.0, 2.0 * eta * n / 3.0
    if not (band[0] <= abs(h) <= band[1]):
        raise ValueError(f"height {h} outside the admissible bands")
    open_pairs = _dual_open(omega, geom)
    comps = _dual_components(open_pairs, geom.squares)
    crossing = _edges_crossing(geom, list(geom.dual_edges.values()), h)
    cross_set = set(crossing)
    hit_squares = {
        s for pair, prim in geom.dual_edges.items() if prim in cross_set for s in pair
    }
    out = set()
    for comp in comps:
        if linf_diameter(comp) >= M and comp & hit_squares:
            out.add(comp)
    return out


def count_big_dual_clusters(omega, geom, h, M):
    """The number of open dual clusters of diameter >= M meeting the dual
    cut path at height h."""
    return len(big_dual_clusters(omega, geom, h, M))


# ---------------------------------------------------------------------------
# strip separation


@dataclass(frozen=True)
class SeparatedInterface:
    gammas: tuple  # tuples of dual squares
    endpoints: tuple  # ((x_hat, y_hat), ...)
    diams: tuple
    ell: float
    K_prime: int


def separate_interface(result, ell, geom):
    """Sweep the width coordinate, picking well-separated maximal pieces of
    the extracted interface, each followed by a clearance strip of width
    ell."""
    if ell >= result.delta * geom.n:
        raise ValueError("the strip width must be below delta * n")
    if ell <= 0:
        raise ValueError("the strip width must be positive")

    vcoord = lambda s: geom.v(geom.square_center(s))
    gammas = []
    endpoints = []
    h = -float(geom.n)
    while True:
        best = None
        # candidate sub-paths: maximal runs of each path right of v(h)
        starts = []
        for path in result.paths:
            vs = [vcoord(s) for s in path]
            k = 0
            while k < len(path):
                if vs[k] >= h:
                    j = k
                    while j < len(path) and vs[j] >= h:
                        j += 1
                    run = path[k:j]
                    rvs = vs[k:j]
                    d = max(rvs) - min(rvs)
                    if d >= ell:
                        start = min(run)
                        starts.append((min(rvs), d, start, run))
                    k = j
                else:
                    k += 1
        if not starts:
            break
        # the sweep stops at the smallest reachable start; among those of
        # that height take maximal width, ties by smallest starting square
        h1 = min(s[0] for s in starts)
        cands = [s for s in starts if s[0] <= h1 + 1e-9]
        cands.sort(key=lambda s: (-s[1], s[2]))
        _, d, _, run = cands[0]
        rvs = [vcoord(s) for s in run]
        i_min = int(np.argmin(rvs))
        i_max = int(np.argmax(rvs))
        lo, hi = min(i_min, i_max), max(i_min, i_max)
        gamma = run[lo : hi + 1]
        x_hat = run[i_min]
        y_hat = run[i_max]
        gammas.append(tuple(gamma))
        endpoints.append((x_hat, y_hat))
        h = vcoord(y_hat) + ell

    diams = tuple(_diam_w(geom, g) for g in gammas)
    K_prime = len(gammas)
    if K_prime > result.K:
        raise InterfaceError("more separated pieces than interface paths")
    budget = (6.0 * result.delta / geom.eta) * geom.n * math.pi * geom.r * geom.r
    lower = 2 * geom.n * geom.rho - budget - 2 * result.K * ell
    if sum(diams) < lower - 1e-9:
        raise InterfaceError(
            f"separated width {sum(diams):.3f} below the bound {lower:.3f}"
        )
    for d in diams:
        assert d >= ell - 1e-9
    if not upsilon_member(diams, K_prime, ell - 1e-9, geom.n, geom.rho, budget + 1e-9):
        raise InterfaceError("separated diameters outside the admissible family")
    return SeparatedInterface(
        gammas=tuple(gammas),
        endpoints=tuple(endpoints),
        diams=diams,
        ell=float(ell),
        K_prime=K_prime,
    )


def upsilon_member(diams, k, ell, n, rho, slack):
    """Membership in the admissible diameter families: each piece at least
    ell wide and the total at least 2 n rho - slack - 2 k ell."""
    if len(diams) != k:
        return False
    if any(s < ell for s in diams):
        return False
    return sum(diams) >= 2 * n * rho - slack - 2 * k * ell


# ---------------------------------------------------------------------------
# the corridor wall event


def wall_check(omega, x, n, half_width=None):
    """Is the dual origin connected to the dual site near n*x by an open
    dual path staying in the sup-norm corridor around the segment?"""
    if half_width is None:
        half_width = 2.0 * math.sqrt(n)
    m = omega.lattice.n - 1
    tx, ty = n * x[0], n * x[1]
    # snap the target to the nearest dual site of the box
    target = (
        min(max(math.floor(tx), 0), m - 1) + 0.5,
        min(max(math.floor(ty), 0), m - 1) + 0.5,
    )
    return dual_corridor_connected(omega, (0.5, 0.5), target, half_width)


def dual_corridor_connected(omega, origin, target, half_width, bounds=None):
    """Open dual connection between two dual sites, restricted to the
    sup-norm corridor of the given half-width around their segment.

    bounds, if given, is (imin, jmin, imax, jmax) inclusive in dual-site
    indices; the path may only visit dual sites inside that rectangle."""
    lat = omega.lattice
    m = lat.n - 1
    horiz = omega.states[: lat.n * (lat.n - 1)].reshape(lat.n, lat.n - 1)
    vert = omega.states[lat.n * (lat.n - 1) :].reshape(lat.n - 1, lat.n)
    # dual sites (i+0.5, j+0.5), 0 <= i, j < m
    dual_h_open = vert[:, 1:-1] == 0  # between (i,j) and (i+1,j)
    dual_v_open = horiz[1:-1, :] == 0  # between (i,j) and (i,j+1)

    ax, ay = origin
    bx, by = target
    seg = np.array([bx - ax, by - ay])
    L2 = float(seg @ seg)

    def in_corridor(i, j):
        if bounds is not None:
            imin, jmin, imax, jmax = bounds
            if not (imin <= i <= imax and jmin <= j <= jmax):
                return False
        px, py = i + 0.5, j + 0.5
        if L2 == 0.0:
            dx, dy = px - ax, py - ay
        else:
            t = ((px - ax) * seg[0] + (py - ay) * seg[1]) / L2
            t = min(1.0, max(0.0, t))
            dx = px - (ax + t * seg[0])
            dy = py - (ay + t * seg[1])
        return max(abs(dx), abs(dy)) <= half_width

    si, sj = int(origin[0] - 0.5), int(origin[1] - 0.5)
    ti, tj = int(target[0] - 0.5), int(target[1] - 0.5)
    for i, j in ((si, sj), (ti, tj)):
        if not (0 <= i < m and 0 <= j < m):
            return False
    seen = np.zeros((m, m), dtype=bool)
    if not in_corridor(si, sj):
        return False
    seen[sj, si] = True
    stack = [(si, sj)]
    while stack:
        i, j = stack.pop()
        if (i, j) == (ti, tj):
            return True
        for di, dj, ok in (
            (1, 0, i + 1 < m and dual_h_open[j, i]),
            (-1, 0, i - 1 >= 0 and dual_h_open[j, i - 1]),
            (0, 1, j + 1 < m and dual_v_open[j, i]),
            (0, -1, j - 1 >= 0 and dual_v_open[j - 1, i]),
        ):
            ii, jj = i + di, j + dj
            if ok and not seen[jj, ii] and in_corridor(ii, jj):
                seen[jj, ii] = True
                stack.append((ii, jj))
    return False


def wall_rate_estimate(
    n,
    p,
    rng,
    segment=12,
    samples=4000,
    thin=2,
    burn_in=100,
    half_width=None,
):
    """Upper bound on -log Phi[Wall((1/2,1/2), n*e1)] by segment splitting.

    The wall is covered by consecutive dual sub-connections whose interior
    breakpoints are lifted to half the corridor width (away from the wired
    boundary, where dual connections are suppressed) and whose
    sub-corridors use half the corridor half-width, so every concatenated
    path stays inside the full corridor.  The sub-events are decreasing,
    hence P[Wall] >= prod_k P[segment_k] by positive association; each
    factor is a moderate probability estimated by counting on one chain.
    Returns (neg_log_prob, stderr, per-segment counts)."""
    from .lattice import build_box
    from .model import FKSampler, WIRED

    if half_width is None:
        half_width = 2.0 * math.sqrt(n)
    m = n - 1
    lift = 0.5 + math.floor(half_width / 2.0)
    anchor = max(2, segment // 3)
    interior = list(range(anchor, m - 1 - anchor + 1, segment))
    breaks = sorted(set([0] + interior + [m - 1 - anchor, m - 1]))
    points = [(k + 0.5, lift) for k in breaks]
    points[0] = (0.5, 0.5)
    points[-1] = (m - 1 + 0.5, 0.5)
    pairs = list(zip(points[:-1], points[1:]))

    sampler = FKSampler(build_box(n), p, bc=WIRED, rng=rng)
    sampler.run(burn_in)
    hits = np.zeros((samples, len(pairs)), dtype=bool)
    for s in range(samples):
        sampler.run(thin)
        omega = sampler.state
        for k, (a, b) in enumerate(pairs):
            hits[s, k] = dual_corridor_connected(omega, a, b, half_width / 2.0)

    counts = hits.sum(axis=0)
    if np.any(counts == 0):
        raise InterfaceError(
            f"segment estimates starved: counts {counts.tolist()} in {samples} samples"
        )
    p_hat = counts / samples
    neg_log = float(-np.log(p_hat).sum())
    # batch means over the chain absorb autocorrelation
    nb = 20
    usable = samples - samples % nb
    bh = hits[:usable].reshape(nb, -1, len(pairs)).mean(axis=1)
    var_log = 0.0
    for k in range(len(pairs)):
        var_log += float(bh[:, k].var(ddof=1) / nb) / p_hat[k] ** 2
    return neg_log, math.sqrt(var_log), counts.tolist()
