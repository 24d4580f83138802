"""Block coarse graining: the six block events, the good/bad block field,
bad-component statistics and the closed-form deviation bounds."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lattice import blockify, linf_components, linf_diameter
from .model import FKSampler
from .rng import RngStream

EVENT_KINDS = ("U", "R", "V", "F", "W", "T")


@dataclass(frozen=True)
class BlockEventParams:
    """One of the six block events with its thresholds."""

    kind: str
    M: int = 1
    delta: float = 0.1
    theta: float = 1.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown block event kind {self.kind!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")


class SubBox:
    """Axis-aligned square sub-box [x0, x0+side) x [y0, y0+side)."""

    def __init__(self, x0, y0, side):
        if side < 1:
            raise ValueError(f"sub-box side must be >= 1, got {side}")
        self.x0, self.y0, self.side = int(x0), int(y0), int(side)

    def contained_in(self, lattice):
        return (
            0 <= self.x0
            and 0 <= self.y0
            and self.x0 + self.side <= lattice.n
            and self.y0 + self.side <= lattice.n
        )

    def clipped(self, lattice):
        x0 = max(self.x0, 0)
        y0 = max(self.y0, 0)
        x1 = min(self.x0 + self.side, lattice.n)
        y1 = min(self.y0 + self.side, lattice.n)
        return x0, y0, x1 - x0, y1 - y0

    def __repr__(self):
        return f"SubBox(x0={self.x0}, y0={self.y0}, side={self.side})"


def _coerce_box(box, lattice):
    if isinstance(box, SubBox):
        b = box
    else:
        b = SubBox(*box)
    if not b.contained_in(lattice):
        raise ValueError(f"{b!r} is not contained in the {lattice.n}-box")
    return b


def _open_grids(omega, x0, y0, w, h):
    """Open-state grids of the horizontal/vertical edges inside a window."""
    n = omega.lattice.n
    horiz = omega.states[: n * (n - 1)].reshape(n, n - 1)  # [y, x] edge (x,y)-(x+1,y)
    vert = omega.states[n * (n - 1) :].reshape(n - 1, n)  # [y, x] edge (x,y)-(x,y+1)
    oh = horiz[y0 : y0 + h, x0 : x0 + w - 1] if w > 1 else np.zeros((h, 0), np.uint8)
    ov = vert[y0 : y0 + h - 1, x0 : x0 + w] if h > 1 else np.zeros((0, w), np.uint8)
    return oh, ov


def window_labels(omega, x0, y0, w, h):
    """Cluster labels of the configuration restricted to a w x h window,
    using only edges with both endpoints inside; shape (h, w), [y, x]."""
    oh, ov = _open_grids(omega, x0, y0, w, h)
    nsites = w * h
    idx = np.arange(nsites).reshape(h, w)
    rows = []
    cols = []
    ys, xs = np.nonzero(oh)
    rows.append(idx[ys, xs])
    cols.append(idx[ys, xs + 1])
    ys, xs = np.nonzero(ov)
    rows.append(idx[ys, xs])
    cols.append(idx[ys + 1, xs])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    if rows.size:
        g = coo_matrix((np.ones(rows.size, np.int8), (rows, cols)), shape=(nsites, nsites))
        _, labels = connected_components(g, directed=False)
    else:
        labels = np.arange(nsites)
    return labels.reshape(h, w)


def _crossing_label(labels):
    """Label of the all-four-sides crossing cluster, or None."""
    sides = [set(labels[0]), set(labels[-1]), set(labels[:, 0]), set(labels[:, -1])]
    hit = sides[0] & sides[1] & sides[2] & sides[3]
    if not hit:
        return None
    assert len(hit) == 1, "two crossing clusters in a planar box"
    return hit.pop()


def _cluster_diameters(labels):
    """Sup-norm diameter of each label's site set."""
    h, w = labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    flat = labels.ravel()
    nl = flat.max() + 1
    out = {}
    xmin = np.full(nl, w, dtype=np.int64)
    xmax = np.full(nl, -1, dtype=np.int64)
    ymin = np.full(nl, h, dtype=np.int64)
    ymax = np.full(nl, -1, dtype=np.int64)
    np.minimum.at(xmin, flat, xs.ravel())
    np.maximum.at(xmax, flat, xs.ravel())
    np.minimum.at(ymin, flat, ys.ravel())
    np.maximum.at(ymax, flat, ys.ravel())
    for c in range(nl):
        out[c] = int(max(xmax[c] - xmin[c], ymax[c] - ymin[c]))
    return out


def _subwindow_cluster_crossing(omega, bx0, by0, x0, y0, m, cross_sites):
    """Does the crossing cluster, using only open edges inside the
    m-sub-window at (x0, y0) relative to the window origin (bx0, by0),
    connect all four sides of that sub-window?"""
    sub_labels = window_labels(omega, bx0 + x0, by0 + y0, m, m)
    mask = cross_sites[y0 : y0 + m, x0 : x0 + m]
    if not (mask[0].any() and mask[-1].any() and mask[:, 0].any() and mask[:, -1].any()):
        return False
    top = set(sub_labels[0][mask[0]].tolist())
    bot = set(sub_labels[-1][mask[-1]].tolist())
    left = set(sub_labels[:, 0][mask[:, 0]].tolist())
    right = set(sub_labels[:, -1][mask[:, -1]].tolist())
    return bool(top & bot & left & right)


def _dual_annulus_reachable(omega, box, delta):
    """Open dual path from the boundary of the shrunken inner box to the
    boundary of the box (the failure criterion for the circuit event)."""
    x0, y0, side = box.x0, box.y0, box.side
    if side < 3:
        return True  # no room for a circuit
    oh, ov = _open_grids(omega, x0, y0, side, side)
    # dual sites: plaquette centers (i+1/2, j+1/2), 0 <= i, j <= side-2
    m = side - 1
    # dual edge between plaquette (i,j) and (i+1,j) crosses vertical primal
    # edge (i+1, j)-(i+1, j+1): open dual iff primal closed
    dual_h = ov[:, 1:-1] == 0  # shape (m, m-1): [j, i]
    dual_v = oh[1:-1, :] == 0  # shape (m-1, m)
    inner_side = max(1, math.ceil(side * (1 - 2 * delta)))
    lo = (side - inner_side) // 2
    hi = lo + inner_side - 1  # inner box sites span [lo, hi]
    # plaquettes with a corner on the inner-box boundary ring
    start = np.zeros((m, m), dtype=bool)
    for j in range(m):
        for i in range(m):
            xs = (i, i + 1)
            ys = (j, j + 1)
            on_ring = any(
                (x in (lo, hi) and lo <= y <= hi) or (y in (lo, hi) and lo <= x <= hi)
                for x in xs
                for y in ys
            )
            if on_ring:
                start[j, i] = True
    target = np.zeros((m, m), dtype=bool)
    target[0, :] = target[-1, :] = True
    target[:, 0] = target[:, -1] = True
    # BFS over open dual edges
    seen = start.copy()
    frontier = list(zip(*np.nonzero(start)))
    while frontier:
        nxt = []
        for j, i in frontier:
            if i + 1 < m and dual_h[j, i] and not seen[j, i + 1]:
                seen[j, i + 1] = True
                nxt.append((j, i + 1))
            if i - 1 >= 0 and dual_h[j, i - 1] and not seen[j, i - 1]:
                seen[j, i - 1] = True
                nxt.append((j, i - 1))
            if j + 1 < m and dual_v[j, i] and not seen[j + 1, i]:
                seen[j + 1, i] = True
                nxt.append((j + 1, i))
            if j - 1 >= 0 and dual_v[j - 1, i] and not seen[j - 1, i]:
                seen[j - 1, i] = True
                nxt.append((j - 1, i))
        frontier = nxt
    return bool((seen & target).any())


def evaluate_block_event(omega, box, params, sigma=None):
    """Exact indicator of one block event on the restricted configuration."""
    lat = omega.lattice
    box = _coerce_box(box, lat)
    side = box.side
    labels = window_labels(omega, box.x0, box.y0, side, side)
    kind = params.kind

    if kind in ("U", "R", "V"):
        cross = _crossing_label(labels)
        if cross is None:
            return False
        if kind == "U":
            return True
        if kind == "V":
            size = int(np.sum(labels == cross))
            return size >= (1 - params.delta) * params.theta * side * side
        # R: no stray large path, and the crossing cluster crosses every
        # sub-box of diameter >= M (side-M windows on a stride-M/4 grid)
        diams = _cluster_diameters(labels)
        for c, d in diams.items():
            if c != cross and d >= params.M:
                return False
        M = params.M
        if M > side:
            return True
        stride = max(1, M // 4)
        cross_sites = labels == cross
        offsets = sorted(set(list(range(0, side - M + 1, stride)) + [side - M]))
        for yy in offsets:
            for xx in offsets:
                if not _subwindow_cluster_crossing(
                    omega, box.x0, box.y0, xx, yy, M, cross_sites
                ):
                    return False
        return True

    if kind == "F":
        return not _dual_annulus_reachable(omega, box, params.delta)

    if kind in ("W", "T"):
        boundary_labels = set(labels[0]) | set(labels[-1]) | set(labels[:, 0]) | set(
            labels[:, -1]
        )
        attached = np.isin(labels, sorted(boundary_labels))
        if kind == "W":
            return int(attached.sum()) <= (1 + params.delta) * params.theta * side * side
        if sigma is None:
            raise ValueError("the signed-sum event needs the coupled spin configuration")
        grid = sigma.values.reshape(lat.n, lat.n)
        window = grid[box.y0 : box.y0 + side, box.x0 : box.x0 + side]
        signed = float(np.sum(window[~attached]))
        return abs(signed) <= params.delta * params.theta * side * side

    raise ValueError(f"unknown block event kind {kind!r}")


# ---------------------------------------------------------------------------
# the good/bad block field


@dataclass(frozen=True)
class BlockField:
    grid: object
    X: dict
    event_bits: dict

    def bad_indices(self):
        return {bx for bx, good in self.X.items() if not good}

    def bad_fraction(self):
        return sum(1 for g in self.X.values() if not g) / max(1, len(self.X))


def block_field(omega, sigma, K, good_def):
    """X(x) = 1 iff all events in good_def hold on the block at x; the
    path-structure event is evaluated on the 3x3 event block, the others
    on the partitioning block, both clipped to the box."""
    lat = omega.lattice
    if lat.n // K < 2:
        raise ValueError(f"block side {K} leaves fewer than 2 blocks per side")
    grid = blockify(lat.sites, K)
    X = {}
    bits = {}
    for bx in sorted(grid.index_set):
        good = True
        b = 0
        for i, params in enumerate(good_def):
            if params.kind == "R":
                x0 = max(0, K * (bx[0] - 1))
                y0 = max(0, K * (bx[1] - 1))
                x1 = min(lat.n, K * (bx[0] + 2))
                y1 = min(lat.n, K * (bx[1] + 2))
                side = min(x1 - x0, y1 - y0)
                box = SubBox(x0, y0, side)
            else:
                side = min(K, lat.n - K * bx[0], lat.n - K * bx[1])
                box = SubBox(K * bx[0], K * bx[1], side)
            ok = evaluate_block_event(omega, box, params, sigma=sigma)
            good = good and ok
            b |= int(ok) << i
        X[bx] = 1 if good else 0
        bits[bx] = b
    return BlockField(grid=grid, X=X, event_bits=bits)


def bad_component_stats(field):
    """Sup-norm components of the bad set with sizes and diameters."""
    bad = field.bad_indices()
    comps = linf_components(bad)
    return [(frozenset(c), len(c), linf_diameter(c)) for c in comps]


def block_stats_csv(field, fh):
    """Write (x, y, X, event_bits) rows with a header."""
    fh.write("x,y,X,event_bits\n")
    for bx in sorted(field.X):
        fh.write(f"{bx[0]},{bx[1]},{field.X[bx]},{field.event_bits[bx]}\n")


# ---------------------------------------------------------------------------
# closed-form bounds


def cramer_rate(eps, delta):
    """Cramer transform of a Bernoulli(delta) evaluated at eps."""
    if not (0.0 < delta < 1.0 and 0.0 < eps < 1.0):
        raise ValueError("eps and delta must lie in (0, 1)")
    if eps < delta:
        raise ValueError("the upper-tail rate needs eps >= delta")
    if eps == delta:
        return 0.0
    out = eps * math.log(eps / delta)
    if eps < 1.0:
        out += (1 - eps) * math.log((1 - eps) / (1 - delta))
    return out


def theoretical_bound(kind, **params):
    """cramer: the Bernoulli rate; hoeffding: exp(-n t^2); bad_fraction:
    the coarse-grained composite bound 9 exp(-rate * floor(n/6K)^2)."""
    if kind == "cramer":
        return cramer_rate(params["eps"], params["delta"])
    if kind == "hoeffding":
        n, t = params["n"], params["t"]
        m = params.get("m", 0.0)
        if not 0.0 < t < 1.0 - m:
            raise ValueError(f"t must lie in (0, {1.0 - m}), got {t}")
        return math.exp(-n * t * t)
    if kind == "bad_fraction":
        n, K = params["n"], params["K"]
        eps, delta = params["eps"], params["delta"]
        if n < 6 * K:
            raise ValueError("the composite bound needs n >= 6K")
        return 9.0 * math.exp(-cramer_rate(eps, delta) * (n // (6 * K)) ** 2)
    raise ValueError(f"unknown bound kind {kind!r}")


# ---------------------------------------------------------------------------
# mixing probe


def estimate_mixing(
    n,
    p,
    gamma_region,
    delta_region,
    event_A,
    event_B,
    samples,
    rng=None,
    sweeps=2,
    burn_in=100,
):
    """Relative covariance |P[A and B] - P[A]P[B]| / (P[A]P[B]) between an
    event of the first region and an event of the second, estimated on a
    single chain.  Returns (estimate, stderr) with the stderr propagated
    from batch means."""
    gamma = set(map(tuple, gamma_region))
    delt = set(map(tuple, delta_region))
    if gamma & delt:
        raise ValueError("the two regions must be disjoint")
    from .lattice import build_box
    from .model import WIRED

    lat = build_box(n)
    rng = rng if rng is not None else RngStream(0)
    sampler = FKSampler(lat, p, bc=WIRED, rng=rng)
    sampler.run(burn_in)
    hits = np.zeros((samples, 3))
    for s in range(samples):
        sampler.run(sweeps)
        a = bool(event_A(sampler.state))
        b = bool(event_B(sampler.state))
        hits[s] = (a, b, a and b)
    pa, pb, pab = hits.mean(axis=0)
    if pa == 0.0 or pb == 0.0:
        return 0.0, 0.0
    est = abs(pab - pa * pb) / (pa * pb)
    n_batches = min(20, samples)
    parts = np.array_split(hits, n_batches, axis=0)
    vals = []
    for part in parts:
        qa, qb, qab = part.mean(axis=0)
        if qa > 0 and qb > 0:
            vals.append(abs(qab - qa * qb) / (qa * qb))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(est), stderr


# ---------------------------------------------------------------------------
# crossing-failure decay


def block_decay_estimate(
    K,
    p,
    rng=None,
    margin=8,
    segment=8,
    samples=4000,
    thin=2,
    burn_in=100,
):
    """Lower bound on log P[no four-side crossing cluster in a K-window].

    The window has an open left-right crossing exactly when its dual box
    has no top-bottom closed-dual crossing, so any dual connection spanning
    the window's dual rows rules the crossing cluster out.  That connection
    is covered by consecutive sub-connections along the centre column; the
    sub-events are decreasing, so the product of their probabilities is a
    lower bound by positive association.  Returns (log_prob, stderr,
    per-segment hit counts)."""
    from .interface import InterfaceError, dual_corridor_connected
    from .lattice import build_box
    from .model import WIRED

    n = K + 2 * margin
    x0 = margin
    jmin, jmax = x0, x0 + K - 2
    ic = x0 + (K - 2) // 2
    bounds = (jmin, jmin, jmax, jmax)
    breaks = sorted(set(list(range(jmin, jmax, segment)) + [jmax]))
    points = [(ic + 0.5, j + 0.5) for j in breaks]
    pairs = list(zip(points[:-1], points[1:]))

    rng = rng if rng is not None else RngStream(0)
    sampler = FKSampler(build_box(n), p, bc=WIRED, rng=rng)
    sampler.run(burn_in)
    hits = np.zeros((samples, len(pairs)), dtype=bool)
    for s in range(samples):
        sampler.run(thin)
        for k, (a, b) in enumerate(pairs):
            hits[s, k] = dual_corridor_connected(sampler.state, a, b, float(K), bounds)

    counts = hits.sum(axis=0)
    if np.any(counts == 0):
        raise InterfaceError(
            f"segment estimates starved: counts {counts.tolist()} in {samples} samples"
        )
    p_hat = counts / samples
    log_p = float(np.log(p_hat).sum())
    nb = 20
    usable = samples - samples % nb
    bh = hits[:usable].reshape(nb, -1, len(pairs)).mean(axis=1)
    var_log = 0.0
    for k in range(len(pairs)):
        var_log += float(bh[:, k].var(ddof=1) / nb) / p_hat[k] ** 2
    return log_p, math.sqrt(var_log), counts.tolist()
