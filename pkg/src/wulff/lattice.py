"""Geometry of the square box, its planar dual, the 8-neighbour graph and
block rescaling.

Sites of the n x n box are integer pairs (x, y) with 0 <= x, y < n, stored
as offsets from the lower-left corner; the continuum embedding into the
centred unit square is applied only when building measures (see droplet).
Edges follow a fixed canonical order (all horizontal edges row-major, then
all vertical edges row-major) so configurations bit-pack deterministically.
"""

from dataclasses import dataclass

import numpy as np


def _canonical_edge(a, b):
    return (a, b) if a <= b else (b, a)


class Lattice:
    """The n x n box: sites, nearest-neighbour edges and boundary."""

    def __init__(self, n):
        if n < 2:
            raise ValueError(f"box side must be >= 2, got {n}")
        self.n = int(n)
        n = self.n
        self.sites = [(x, y) for y in range(n) for x in range(n)]
        self.site_index = {s: i for i, s in enumerate(self.sites)}

        horiz = [((x, y), (x + 1, y)) for y in range(n) for x in range(n - 1)]
        vert = [((x, y), (x, y + 1)) for y in range(n - 1) for x in range(n)]
        self.edges = horiz + vert
        self.edge_index = {e: i for i, e in enumerate(self.edges)}

        # index pairs for vectorised work
        self.edge_array = np.array(
            [[self.site_index[a], self.site_index[b]] for a, b in self.edges],
            dtype=np.int64,
        )
        self.n_sites = n * n
        self.n_edges = len(self.edges)

        self.boundary = frozenset(
            (x, y) for x, y in self.sites if x in (0, n - 1) or y in (0, n - 1)
        )
        self.interior = frozenset(s for s in self.sites if s not in self.boundary)
        self.boundary_mask = np.zeros(self.n_sites, dtype=bool)
        for s in self.boundary:
            self.boundary_mask[self.site_index[s]] = True

    def contains(self, site):
        x, y = site
        return 0 <= x < self.n and 0 <= y < self.n

    def neighbors(self, site):
        x, y = site
        out = []
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = (x + d[0], y + d[1])
            if self.contains(t):
                out.append(t)
        return out

    def edge_id(self, a, b):
        e = _canonical_edge(tuple(a), tuple(b))
        try:
            return self.edge_index[e]
        except KeyError:
            raise ValueError(f"{a}-{b} is not an edge of the box") from None

    def __repr__(self):
        return f"Lattice(n={self.n})"


def build_box(n):
    """The box of side n with its canonical edge ordering."""
    return Lattice(n)


@dataclass(frozen=True)
class DualEdge:
    """Edge of the shifted lattice crossing its primal edge at the midpoint."""

    endpoints: tuple
    primal: tuple

    def as_primal(self):
        """The endpoints, reinterpreted as an edge of the crossed lattice."""
        return self.endpoints


def dual_edge(e):
    """The unique edge of the shifted lattice crossing e orthogonally.

    Accepts integer or half-integer endpoint coordinates, so applying it
    twice returns to the original edge.
    """
    (ax, ay), (bx, by) = e
    dx, dy = bx - ax, by - ay
    if abs(dx) + abs(dy) != 1 or dx * dy != 0:
        raise ValueError(f"{e} is not a nearest-neighbour pair")
    mx, my = (ax + bx) / 2.0, (ay + by) / 2.0
    if dx != 0:  # horizontal input -> vertical crossing edge
        ends = ((mx, my - 0.5), (mx, my + 0.5))
    else:
        ends = ((mx - 0.5, my), (mx + 0.5, my))

    def _integerize(pt):
        x, y = pt
        if float(x).is_integer() and float(y).is_integer():
            return (int(x), int(y))
        return pt

    ends = tuple(_integerize(p) for p in ends)
    # `primal` always names the integer-lattice edge of the pair, so the
    # double application returns to the original edge
    if all(isinstance(c, int) for p in ends for c in p):
        prim = _canonical_edge(*ends)
    else:
        prim = _canonical_edge((ax, ay), (bx, by))
    return DualEdge(endpoints=ends, primal=prim)


# ---------------------------------------------------------------------------
# the 8-neighbour (sup-norm) graph


def linf_components(occupied):
    """Partition a finite site set into 8-connected components."""
    occupied = set(map(tuple, occupied))
    seen = set()
    comps = []
    for start in sorted(occupied):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        seen.add(start)
        while stack:
            x, y = stack.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    if dx == 0 and dy == 0:
                        continue
                    t = (x + dx, y + dy)
                    if t in occupied and t not in seen:
                        seen.add(t)
                        comp.add(t)
                        stack.append(t)
        comps.append(comp)
    return comps


def linf_diameter(points):
    """Sup-norm diameter of a finite point set (0 for singletons, -inf empty)."""
    pts = list(points)
    if not pts:
        return float("-inf")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return max(max(xs) - min(xs), max(ys) - min(ys))


def linf_neighborhood(points, r):
    """Integer points at sup-norm distance < r from the set."""
    out = set()
    rr = int(np.ceil(r)) - 1 if float(r).is_integer() else int(np.floor(r))
    for x, y in points:
        for dx in range(-rr, rr + 1):
            for dy in range(-rr, rr + 1):
                out.add((x + dx, y + dy))
    return out


# ---------------------------------------------------------------------------
# block rescaling


@dataclass(frozen=True)
class BlockGrid:
    """Partition of the plane into K-blocks, restricted to a target region.

    index_set holds the rescaled sites whose partitioning block meets the
    region; the event block of a rescaled site is the 3x3 union of blocks
    around it.
    """

    K: int
    index_set: frozenset

    def block_sites(self, bx):
        """Sites of the partitioning block at rescaled index bx."""
        K = self.K
        x0, y0 = K * bx[0], K * bx[1]
        return [(x0 + i, y0 + j) for j in range(K) for i in range(K)]

    def event_block_indices(self, bx):
        """The 3x3 family of rescaled indices whose union is the event block."""
        return [(bx[0] + dx, bx[1] + dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]

    def event_block_sites(self, bx):
        out = []
        for nb in self.event_block_indices(bx):
            out.extend(self.block_sites(nb))
        return out


def blockify(region, K):
    """Rescale a site set by block side K."""
    if K < 1:
        raise ValueError(f"block side must be >= 1, got {K}")
    idx = frozenset((x // K, y // K) for x, y in map(tuple, region))
    return BlockGrid(K=int(K), index_set=idx)
