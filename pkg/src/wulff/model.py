"""Ising and FK random-cluster measures on the box, their coupling, a
cluster Monte Carlo sampler, exact small-box enumeration oracles and the
closed-form observables (critical point, magnetization, surface tension).
"""

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lattice import Lattice, build_box
from .rng import RngStream

Q = 2  # cluster weight of the Ising-coupled random cluster model

P_C = math.sqrt(2.0) / (1.0 + math.sqrt(2.0))
BETA_C = math.asinh(1.0) / 2.0


@dataclass(frozen=True)
class CriticalConstants:
    p_c: float = P_C
    beta_c: float = BETA_C
    q: int = Q


class OracleSizeError(Exception):
    """Raised when a box is too large for exhaustive enumeration."""


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True)
class BoundaryCondition:
    """Cluster-counting convention: wired, free or a boundary partition."""

    kind: str
    partition: tuple = ()

    @staticmethod
    def wired():
        return BoundaryCondition("wired")

    @staticmethod
    def free():
        return BoundaryCondition("free")

    @staticmethod
    def from_partition(blocks):
        blocks = tuple(frozenset(map(tuple, b)) for b in blocks)
        return BoundaryCondition("partition", blocks)

    def blocks_for(self, lattice):
        """The identification groups on the boundary of the given box."""
        if self.kind == "wired":
            return (lattice.boundary,)
        if self.kind == "free":
            return ()
        seen = set()
        for b in self.partition:
            if not b:
                raise ValueError("empty partition block")
            for s in b:
                if s not in lattice.boundary:
                    raise ValueError(f"{s} is not a boundary site")
                if s in seen:
                    raise ValueError(f"{s} appears in two partition blocks")
                seen.add(s)
        if seen != set(lattice.boundary):
            raise ValueError("partition does not cover the boundary")
        return self.partition


WIRED = BoundaryCondition.wired()
FREE = BoundaryCondition.free()


# ---------------------------------------------------------------------------
# configurations


class SpinConfig:
    """+-1 spins on the box.  Under plus boundary conditions the boundary
    spins are clamped to +1 (distribution-equivalent for interior
    observables and it keeps enumeration small)."""

    def __init__(self, lattice, values, bc="plus"):
        if bc not in ("plus", "free"):
            raise ValueError(f"unknown spin boundary condition {bc!r}")
        values = np.asarray(values, dtype=np.int8)
        if values.shape != (lattice.n_sites,):
            raise ValueError("spin array does not match the lattice")
        if not np.all(np.abs(values) == 1):
            raise ValueError("spins must be +-1")
        if bc == "plus" and not np.all(values[lattice.boundary_mask] == 1):
            raise ValueError("plus boundary conditions clamp boundary spins to +1")
        self.lattice = lattice
        self.values = values
        self.bc = bc

    @staticmethod
    def constant(lattice, value=1, bc="plus"):
        return SpinConfig(lattice, np.full(lattice.n_sites, value, dtype=np.int8), bc)

    def __getitem__(self, site):
        return int(self.values[self.lattice.site_index[tuple(site)]])

    def magnetization(self):
        return float(self.values.mean())

    def as_grid(self):
        """(n, n) array indexed [y, x]."""
        return self.values.reshape(self.lattice.n, self.lattice.n)


class EdgeConfig:
    """0/1 bond states on the canonical edge order, plus a counting bc."""

    def __init__(self, lattice, states, bc=WIRED):
        states = np.asarray(states, dtype=np.uint8)
        if states.shape != (lattice.n_edges,):
            raise ValueError("edge array does not match the lattice")
        if not np.all(states <= 1):
            raise ValueError("edge states must be 0/1")
        self.lattice = lattice
        self.states = states
        self.bc = bc

    @staticmethod
    def constant(lattice, value=0, bc=WIRED):
        return EdgeConfig(lattice, np.full(lattice.n_edges, value, dtype=np.uint8), bc)

    def __getitem__(self, edge):
        return int(self.states[self.lattice.edge_id(*edge)])

    def open_count(self):
        return int(self.states.sum())

    def open_edges(self):
        return [self.lattice.edges[i] for i in np.flatnonzero(self.states)]

    def dual_open_primal_edges(self):
        """Primal edges whose dual edge is open (i.e. the closed ones)."""
        return [self.lattice.edges[i] for i in np.flatnonzero(self.states == 0)]


# ---------------------------------------------------------------------------
# cluster labelling


class ClusterSet:
    """Connected components of the open edges, with the partition-aware
    cluster count cl^pi."""

    def __init__(self, lattice, labels, bc):
        self.lattice = lattice
        self.labels = labels
        self.bc = bc
        self.n_raw = int(labels.max()) + 1 if labels.size else 0
        counts = np.bincount(labels, minlength=self.n_raw)
        self.sizes = {int(c): int(counts[c]) for c in range(self.n_raw)}
        touching = set(np.unique(labels[lattice.boundary_mask]).tolist())
        self.touches_boundary = {c: (c in touching) for c in range(self.n_raw)}
        self.count_with_bc = self._count(bc)

    def _count(self, bc):
        groups = bc.blocks_for(self.lattice)
        if not groups:
            return self.n_raw
        # union-find over cluster ids, one virtual root per partition block
        parent = list(range(self.n_raw + len(groups)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[rb] = ra

        for gi, block in enumerate(groups):
            virt = self.n_raw + gi
            for s in block:
                union(virt, int(self.labels[self.lattice.site_index[s]]))
        roots = {find(c) for c in range(self.n_raw)}
        return len(roots)

    def label_of(self, site):
        return int(self.labels[self.lattice.site_index[tuple(site)]])

    def bounding_boxes(self):
        n = self.lattice.n
        grid = self.labels.reshape(n, n)
        boxes = {}
        for c in range(self.n_raw):
            ys, xs = np.nonzero(grid == c)
            boxes[c] = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        return boxes


def label_clusters(omega, bc=None):
    """Label the open clusters of an edge configuration."""
    lat = omega.lattice
    bc = omega.bc if bc is None else bc
    open_idx = np.flatnonzero(omega.states)
    if open_idx.size:
        rows = lat.edge_array[open_idx, 0]
        cols = lat.edge_array[open_idx, 1]
        g = coo_matrix(
            (np.ones(open_idx.size, dtype=np.int8), (rows, cols)),
            shape=(lat.n_sites, lat.n_sites),
        )
        _, labels = connected_components(g, directed=False)
    else:
        labels = np.arange(lat.n_sites)
    return ClusterSet(lat, labels.astype(np.int64), bc)


# ---------------------------------------------------------------------------
# Hamiltonian, Ising probabilities

def hamiltonian(sigma):
    """Energy under plus boundary conditions: interior pair term plus the
    boundary field acting on interior sites next to the boundary."""
    if sigma.bc != "plus":
        raise ValueError("the plus-boundary Hamiltonian needs plus boundary conditions")
    lat = sigma.lattice
    v = sigma.values
    h = 0.0
    interior = ~lat.boundary_mask
    a, b = lat.edge_array[:, 0], lat.edge_array[:, 1]
    both_int = interior[a] & interior[b]
    h -= float(np.sum(v[a[both_int]] * v[b[both_int]]))
    mixed = interior[a] ^ interior[b]
    inner = np.where(interior[a[mixed]], a[mixed], b[mixed])
    h -= float(np.sum(v[inner]))
    return h


def _interior_sites(lattice):
    return [s for s in lattice.sites if s not in lattice.boundary]


def _spin_states(lattice):
    """All plus-bc spin configurations (free interior spins)."""
    interior = _interior_sites(lattice)
    k = len(interior)
    if k > 20:
        raise OracleSizeError(f"{k} free spins is beyond the enumeration cap (20)")
    idx = [lattice.site_index[s] for s in interior]
    states = []
    for bits in range(1 << k):
        v = np.ones(lattice.n_sites, dtype=np.int8)
        for j, si in enumerate(idx):
            if not (bits >> j) & 1:
                v[si] = -1
        states.append(SpinConfig(lattice, v, bc="plus"))
    return states


def ising_prob(sigma, beta):
    """Exact probability of a plus-bc spin configuration (exhaustive Z)."""
    states = _spin_states(sigma.lattice)
    energies = np.array([hamiltonian(s) for s in states])
    logw = -beta * energies
    shift = logw.max()
    z = np.exp(logw - shift).sum()
    return float(np.exp(-beta * hamiltonian(sigma) - shift) / z)


def fk_log_weight(omega, p, bc=None):
    """log of the unnormalised random-cluster weight q^cl p^o (1-p)^(E-o)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    bc = omega.bc if bc is None else bc
    cl = label_clusters(omega, bc).count_with_bc
    o = omega.open_count()
    e = omega.lattice.n_edges
    return cl * math.log(Q) + o * math.log(p) + (e - o) * math.log1p(-p)


def fk_weight(omega, p, bc=None):
    """Unnormalised random-cluster weight (computed in log space first)."""
    return math.exp(fk_log_weight(omega, p, bc))


# ---------------------------------------------------------------------------
# the two conditional maps of the edge-spin coupling


def couple_fk_to_spin(omega, rng, h=0.0):
    """Colour the clusters: boundary-touching ones +1 (wired or partition
    bc), the rest independently +-1, biased by an optional uniform field h
    applied per site."""
    lat = omega.lattice
    cs = label_clusters(omega)
    sizes = np.bincount(cs.labels, minlength=cs.n_raw).astype(np.float64)
    if omega.bc.kind in ("wired", "partition"):
        touching = np.zeros(cs.n_raw, dtype=bool)
        touching[np.unique(cs.labels[lat.boundary_mask])] = True
    else:
        touching = np.zeros(cs.n_raw, dtype=bool)
    u = rng.random(cs.n_raw)
    if h == 0.0:
        colors = np.where(u < 0.5, 1, -1).astype(np.int8)
    else:
        p_plus = 1.0 / (1.0 + np.exp(-2.0 * h * sizes))
        colors = np.where(u < p_plus, 1, -1).astype(np.int8)
    colors[touching] = 1
    values = colors[cs.labels]
    bc = "plus" if omega.bc.kind in ("wired", "partition") else "free"
    return SpinConfig(lat, values, bc=bc)


def couple_spin_to_fk(sigma, p, rng):
    """Open each agreeing edge independently with probability p; edges
    between disagreeing spins stay closed."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    lat = sigma.lattice
    a, b = lat.edge_array[:, 0], lat.edge_array[:, 1]
    agree = sigma.values[a] == sigma.values[b]
    states = (agree & (rng.random(lat.n_edges) < p)).astype(np.uint8)
    bc = WIRED if sigma.bc == "plus" else FREE
    return EdgeConfig(lat, states, bc=bc)


class FKSampler:
    """Markov chain alternating the two coupling maps (cluster sweeps).

    Stationary for the random-cluster measure at (p, bc); the coupled spin
    marginal is the plus-bc Ising measure when bc is wired.  An optional
    uniform field h tilts the spin marginal by exp(h * sum sigma); the
    chain then targets the tilted joint measure.
    """

    def __init__(self, lattice, p, bc=WIRED, rng=None, field=0.0, start="open"):
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {p}")
        self.lattice = lattice
        self.p = p
        self.bc = bc
        self.field = field
        self.rng = rng if rng is not None else RngStream(0)
        if start == "open":
            self.state = EdgeConfig.constant(lattice, 1, bc=bc)
        elif start == "closed":
            self.state = EdgeConfig.constant(lattice, 0, bc=bc)
        else:
            self.state = start
        self.spins = None

    def sweep(self):
        self.spins = couple_fk_to_spin(self.state, self.rng, h=self.field)
        self.state = couple_spin_to_fk(self.spins, self.p, self.rng)
        # keep the counting convention of the chain, not of the map output
        self.state = EdgeConfig(self.lattice, self.state.states, bc=self.bc)
        return self.state

    def run(self, sweeps):
        for _ in range(int(sweeps)):
            self.sweep()
        return self.state


def sample_fk(n, p, bc=WIRED, sweeps=1, rng=None, field=0.0):
    """State of the coupling-alternation chain after `sweeps` sweeps."""
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    lat = n if isinstance(n, Lattice) else build_box(n)
    return FKSampler(lat, p, bc=bc, rng=rng, field=field).run(sweeps)


# ---------------------------------------------------------------------------
# parameter maps and closed-form observables


def dual_p(p):
    """Dual percolation parameter of the planar random-cluster model."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return 2.0 * (1.0 - p) / (2.0 - p)


def p_of_beta(beta):
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    return -math.expm1(-2.0 * beta)


def beta_of_p(p):
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return -0.5 * math.log1p(-p)


def dual_beta(beta):
    """The inverse temperature solving sinh(2b) sinh(2b*) = 1."""
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    return 0.5 * math.asinh(1.0 / math.sinh(2.0 * beta))


def onsager_mstar(beta):
    """Exact spontaneous magnetization; 0 at and below the critical point.

    Doubles as the density theta(p) of the boundary-connected phase in the
    coupled random-cluster model via theta(p) = m*(beta(p))."""
    if beta <= BETA_C:
        return 0.0
    s = math.sinh(2.0 * beta)
    return (1.0 - s ** -4) ** 0.125


def theta_of_p(p):
    return onsager_mstar(beta_of_p(p))


def exact_tension(beta):
    """Axis-direction surface tension per lattice step, 2(beta - beta*)."""
    if beta <= BETA_C:
        return 0.0
    return 2.0 * (beta - dual_beta(beta))


# ---------------------------------------------------------------------------
# exact enumeration oracles

_ENUM_EDGE_CAP = 24
_ENUM_FULL_TABLE_CAP = 20  # keep per-config tables below 2^20 entries


def _popcounts(n_bits):
    idx = np.arange(1 << n_bits, dtype=np.uint32)
    pc = np.zeros(1 << n_bits, dtype=np.uint8)
    for b in range(n_bits):
        pc += ((idx >> b) & 1).astype(np.uint8)
    return pc


def _numba_cl_kernel():
    from numba import njit

    @njit(cache=True)
    def kernel(edge_a, edge_b, n_nodes, group_of_node, n_groups, out_cl):
        n_edges = edge_a.shape[0]
        n_total = n_nodes + n_groups
        parent = np.empty(n_total, dtype=np.int32)
        for cfg in range(out_cl.shape[0]):
            for i in range(n_total):
                parent[i] = i
            # wire each node into its boundary group root
            for i in range(n_nodes):
                g = group_of_node[i]
                if g >= 0:
                    parent[i] = n_nodes + g
            for e in range(n_edges):
                if (cfg >> e) & 1:
                    ra = edge_a[e]
                    while parent[ra] != ra:
                        parent[ra] = parent[parent[ra]]
                        ra = parent[ra]
                    rb = edge_b[e]
                    while parent[rb] != rb:
                        parent[rb] = parent[parent[rb]]
                        rb = parent[rb]
                    if ra != rb:
                        parent[rb] = ra
            cl = 0
            for i in range(n_nodes):
                r = i
                while parent[r] != r:
                    r = parent[r]
                if r == i:
                    cl += 1
            # roots that are pure group nodes count once if occupied
            for g in range(n_groups):
                r = n_nodes + g
                if parent[r] == r:
                    cl += 1
            out_cl[cfg] = cl
        return

    return kernel


_cl_kernel_cache = None


def _cluster_counts_all_configs(edge_a, edge_b, n_nodes, group_of_node, n_groups):
    """cl^pi for every configuration of up to 24 edges."""
    global _cl_kernel_cache
    n_edges = len(edge_a)
    if n_edges > _ENUM_EDGE_CAP:
        raise OracleSizeError(f"{n_edges} edges is beyond the enumeration cap (24)")
    out = np.empty(1 << n_edges, dtype=np.uint8)
    if _cl_kernel_cache is None:
        _cl_kernel_cache = _numba_cl_kernel()
    _cl_kernel_cache(
        np.asarray(edge_a, dtype=np.int32),
        np.asarray(edge_b, dtype=np.int32),
        np.int32(n_nodes),
        np.asarray(group_of_node, dtype=np.int32),
        np.int32(n_groups),
        out,
    )
    return out


class GraphFK:
    """Exhaustive random-cluster table on an arbitrary small graph."""

    def __init__(self, nodes, edges, wiring=()):
        self.nodes = list(nodes)
        self.node_index = {v: i for i, v in enumerate(self.nodes)}
        self.edges = [tuple(e) for e in edges]
        if len(self.edges) > _ENUM_EDGE_CAP:
            raise OracleSizeError(
                f"{len(self.edges)} edges is beyond the enumeration cap (24)"
            )
        self.edge_a = np.array([self.node_index[a] for a, _ in self.edges], dtype=np.int32)
        self.edge_b = np.array([self.node_index[b] for _, b in self.edges], dtype=np.int32)
        group_of_node = np.full(len(self.nodes), -1, dtype=np.int32)
        for gi, block in enumerate(wiring):
            for v in block:
                group_of_node[self.node_index[v]] = gi
        self.n_groups = len(wiring)
        self.cl = _cluster_counts_all_configs(
            self.edge_a, self.edge_b, len(self.nodes), group_of_node, self.n_groups
        )
        self.open_counts = _popcounts(len(self.edges))

    def log_weights(self, p):
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {p}")
        o = self.open_counts.astype(np.float64)
        cl = self.cl.astype(np.float64)
        return (
            cl * math.log(Q)
            + o * math.log(p)
            + (len(self.edges) - o) * math.log1p(-p)
        )

    def probabilities(self, p):
        lw = self.log_weights(p)
        lw -= lw.max()
        w = np.exp(lw)
        return w / w.sum()

    def event_probability(self, p, indicator):
        """indicator maps a config index (bitmask in edge order) to bool."""
        probs = self.probabilities(p)
        mask = np.fromiter(
            (bool(indicator(cfg)) for cfg in range(probs.size)),
            dtype=bool,
            count=probs.size,
        )
        return float(probs[mask].sum())

    def joint_open_cluster(self, p):
        """Exact joint distribution of (open edge count, cl^pi)."""
        n_e = len(self.edges)
        max_cl = int(self.cl.max())
        table = np.zeros((n_e + 1, max_cl + 1))
        probs = self.probabilities(p)
        np.add.at(table, (self.open_counts, self.cl), probs)
        return table


def graph_fk_joint_open_cluster(nodes, edges, wiring, p):
    """Exact (open count, cl^pi) joint without storing per-config weights.

    Streams over all configurations, so it works at the full 24-edge cap;
    the weight depends on the configuration only through (o, cl)."""
    g = GraphFK(nodes, edges, wiring)
    counts = np.zeros((len(edges) + 1, int(g.cl.max()) + 1), dtype=np.float64)
    np.add.at(counts, (g.open_counts, g.cl), 1.0)
    o = np.arange(len(edges) + 1, dtype=np.float64)[:, None]
    cl = np.arange(counts.shape[1], dtype=np.float64)[None, :]
    logw = cl * math.log(Q) + o * math.log(p) + (len(edges) - o) * math.log1p(-p)
    w = counts * np.exp(logw - logw.max())
    return w / w.sum()


def fk_graph_of(lattice, bc=WIRED):
    """GraphFK view of a box with its counting convention."""
    return GraphFK(lattice.sites, lattice.edges, wiring=bc.blocks_for(lattice))


class IsingTable:
    """Exhaustive plus-bc Ising distribution on a small box."""

    def __init__(self, lattice, beta):
        self.lattice = lattice
        self.beta = beta
        self.states = _spin_states(lattice)
        e = np.array([hamiltonian(s) for s in self.states])
        lw = -beta * e
        lw -= lw.max()
        w = np.exp(lw)
        self.probs = w / w.sum()

    def expectation(self, f):
        return float(sum(p * f(s) for p, s in zip(self.probs, self.states)))

    def prob_of(self, predicate):
        return float(sum(p for p, s in zip(self.probs, self.states) if predicate(s)))


def enumerate_exact(lattice, *, beta=None, p=None, bc=WIRED):
    """Exact distribution table: Ising when beta is given, FK when p is."""
    if (beta is None) == (p is None):
        raise ValueError("give exactly one of beta or p")
    if beta is not None:
        return IsingTable(lattice, beta)
    return fk_graph_of(lattice, bc)


# ---------------------------------------------------------------------------
# the exhaustive edge-spin joint (coupling oracle)


class EdwardsSokalJoint:
    """Exhaustive joint of (interior spins, edges) under plus bc.

    Built from the product-of-Bernoulli formula with the agreement
    constraint; boundary spins are clamped to +1, which reproduces both
    the plus-bc spin marginal and the wired edge marginal."""

    def __init__(self, lattice, beta):
        self.lattice = lattice
        self.beta = beta
        self.p = p_of_beta(beta)
        n_e = lattice.n_edges
        if n_e > _ENUM_FULL_TABLE_CAP:
            raise OracleSizeError(f"{n_e} edges is beyond the joint-table cap (20)")
        self.spin_states = _spin_states(lattice)
        pc = _popcounts(n_e)
        a, b = lattice.edge_array[:, 0], lattice.edge_array[:, 1]
        weights = []
        p = self.p
        base = (p / (1 - p))
        for s in self.spin_states:
            agree = s.values[a] == s.values[b]
            agree_bits = 0
            for i in np.flatnonzero(agree):
                agree_bits |= 1 << int(i)
            cfg = np.arange(1 << n_e, dtype=np.uint32)
            consistent = (cfg & np.uint32(((1 << n_e) - 1) ^ agree_bits)) == 0
            w = np.where(consistent, base ** pc.astype(np.float64), 0.0)
            weights.append(w)
        w = np.array(weights)  # (n_sigma, n_omega), up to (1-p)^E factor
        self.joint = w / w.sum()
        self.spin_marginal = self.joint.sum(axis=1)
        self.edge_marginal = self.joint.sum(axis=0)


# ---------------------------------------------------------------------------
# two-point function estimation (subcritical dual regime)


def correlation_curve(
    n,
    beta_hat,
    displacements,
    samples,
    rng,
    thin=2,
    burn_in=50,
    margin=None,
):
    """Monte Carlo estimates of <sigma(0) sigma(x)> for several x.

    Uses the cluster representation: the correlation equals the free-bc
    connection probability, estimated with translation averaging over the
    bulk of the box.  Returns (estimates, stderrs) aligned with
    displacements, from batch means over 20 batches.
    """
    if beta_hat >= BETA_C:
        raise ValueError("the estimator targets the subcritical dual regime")
    lat = n if isinstance(n, Lattice) else build_box(n)
    p = p_of_beta(beta_hat)
    if margin is None:
        margin = max(2, lat.n // 8)
    sampler = FKSampler(lat, p, bc=FREE, rng=rng, start="closed")
    sampler.run(burn_in)
    per_sample = np.zeros((samples, len(displacements)))
    for s in range(samples):
        sampler.run(thin)
        labels = label_clusters(sampler.state).labels.reshape(lat.n, lat.n)
        core = labels[margin : lat.n - margin, margin : lat.n - margin]
        for j, (dx, dy) in enumerate(displacements):
            if dx == 0 and dy == 0:
                per_sample[s, j] = 1.0
                continue
            h, w = core.shape
            if dy >= h or dx >= w:
                raise ValueError(f"displacement {(dx, dy)} exceeds the bulk window")
            a = core[: h - dy, : w - dx]
            b = core[dy:, dx:]
            per_sample[s, j] = float(np.mean(a == b))
    n_batches = min(20, samples)
    batches = np.array_split(per_sample, n_batches, axis=0)
    means = np.array([b.mean(axis=0) for b in batches])
    est = per_sample.mean(axis=0)
    stderr = means.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return est, stderr


def two_point_estimate(n, beta_hat, x, samples, rng, **kwargs):
    """<sigma(0) sigma(x)> with a batch-means standard error."""
    est, err = correlation_curve(n, beta_hat, [tuple(x)], samples, rng, **kwargs)
    return float(est[0]), float(err[0])


# ---------------------------------------------------------------------------
# binary snapshots

_MAGIC = b"WULF1"
_BC_TAGS = {"plus": 0, "free": 1, "wired": 2}
_BC_NAMES = {v: k for k, v in _BC_TAGS.items()}


def _bit_pack(bits):
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def _bit_unpack(data, count):
    arr = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return arr[:count]


def save_config(cfg, path, parameter=0.0):
    """Write a configuration in the WULF1 snapshot format."""
    if isinstance(cfg, SpinConfig):
        model_tag = 0
        bc_tag = _BC_TAGS[cfg.bc]
        bits = (cfg.values > 0).astype(np.uint8)
    elif isinstance(cfg, EdgeConfig):
        model_tag = 1
        if cfg.bc.kind == "partition":
            raise ValueError("partition boundary conditions are not serialisable")
        bc_tag = _BC_TAGS[cfg.bc.kind]
        bits = cfg.states
    else:
        raise TypeError(f"cannot snapshot {type(cfg).__name__}")
    body = (
        _MAGIC
        + struct.pack("<I", cfg.lattice.n)
        + struct.pack("<B", model_tag)
        + struct.pack("<d", parameter)
        + struct.pack("<B", bc_tag)
        + _bit_pack(bits)
    )
    checksum = hashlib.blake2b(body, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(body + checksum)


def load_config(path):
    """Read a WULF1 snapshot; returns (config, parameter)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    body, checksum = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != checksum:
        raise ValueError("snapshot checksum mismatch")
    if body[:5] != _MAGIC:
        raise ValueError("not a WULF1 snapshot")
    n = struct.unpack("<I", body[5:9])[0]
    model_tag = body[9]
    parameter = struct.unpack("<d", body[10:18])[0]
    bc_tag = body[18]
    lat = build_box(n)
    if model_tag == 0:
        bits = _bit_unpack(body[19:], lat.n_sites)
        values = np.where(bits == 1, 1, -1).astype(np.int8)
        cfg = SpinConfig(lat, values, bc=_BC_NAMES[bc_tag])
    elif model_tag == 1:
        bits = _bit_unpack(body[19:], lat.n_edges)
        bc = WIRED if _BC_NAMES[bc_tag] == "wired" else FREE
        cfg = EdgeConfig(lat, bits.astype(np.uint8), bc=bc)
    else:
        raise ValueError(f"unknown model tag {model_tag}")
    return cfg, parameter
