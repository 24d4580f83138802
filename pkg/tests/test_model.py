import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

import wulff
from wulff import model
from wulff.model import (
    BETA_C,
    FREE,
    P_C,
    WIRED,
    BoundaryCondition,
    EdgeConfig,
    EdwardsSokalJoint,
    FKSampler,
    IsingTable,
    OracleSizeError,
    SpinConfig,
    beta_of_p,
    couple_fk_to_spin,
    couple_spin_to_fk,
    dual_beta,
    dual_p,
    exact_tension,
    fk_graph_of,
    fk_weight,
    hamiltonian,
    ising_prob,
    label_clusters,
    load_config,
    onsager_mstar,
    p_of_beta,
    sample_fk,
    save_config,
)
from wulff.lattice import build_box
from wulff.rng import RngStream


@pytest.fixture(scope="module")
def lat3():
    return build_box(3)


def spins_with(lat, assignments, base=1):
    v = np.full(lat.n_sites, base, dtype=np.int8)
    for s, val in assignments.items():
        v[lat.site_index[s]] = val
    return SpinConfig(lat, v)


# ---------------------------------------------------------------------------
# Hamiltonian and Ising probabilities


def test_hamiltonian_examples(lat3):
    assert hamiltonian(SpinConfig.constant(lat3, 1)) == -4.0
    assert hamiltonian(spins_with(lat3, {(1, 1): -1})) == 4.0
    assert hamiltonian(SpinConfig.constant(build_box(2), 1)) == 0.0


def test_hamiltonian_requires_plus_bc(lat3):
    sigma = SpinConfig(lat3, -np.ones(9, dtype=np.int8), bc="free")
    with pytest.raises(ValueError):
        hamiltonian(sigma)


def test_plus_bc_clamps_boundary(lat3):
    with pytest.raises(ValueError):
        spins_with(lat3, {(0, 0): -1})


def test_ising_prob_single_spin_closed_form(lat3):
    p_plus = ising_prob(SpinConfig.constant(lat3, 1), 0.5)
    assert p_plus == pytest.approx(math.exp(2) / (math.exp(2) + math.exp(-2)), abs=1e-12)
    # <sigma(center)> = tanh(4 beta) for the lone interior spin
    mean = p_plus - ising_prob(spins_with(lat3, {(1, 1): -1}), 0.5)
    assert mean == pytest.approx(math.tanh(2.0), abs=1e-12)


def test_ising_prob_beta_zero_uniform():
    lat = build_box(4)  # 4 interior spins
    p = ising_prob(SpinConfig.constant(lat, 1), 1e-12)
    assert p == pytest.approx(1.0 / 16.0, rel=1e-6)


def test_ising_enumeration_size_cap():
    with pytest.raises(OracleSizeError):
        ising_prob(SpinConfig.constant(build_box(7), 1), 0.5)


def test_ising_table_matches_ising_prob(lat3):
    tab = IsingTable(lat3, 0.5)
    for prob, state in zip(tab.probs, tab.states):
        assert prob == pytest.approx(ising_prob(state, 0.5), abs=1e-12)


# ---------------------------------------------------------------------------
# FK weights and cluster counting


def test_fk_weight_examples(lat3):
    p = 0.37
    all_open = EdgeConfig.constant(lat3, 1)
    assert fk_weight(all_open, p) == pytest.approx(2 * p**12, rel=1e-12)
    all_closed = EdgeConfig.constant(lat3, 0)
    assert fk_weight(all_closed, p) == pytest.approx(4 * (1 - p) ** 12, rel=1e-12)
    assert fk_weight(all_closed, p, FREE) == pytest.approx(2**9 * (1 - p) ** 12, rel=1e-12)


def test_fk_weight_rejects_bad_p(lat3):
    with pytest.raises(ValueError):
        fk_weight(EdgeConfig.constant(lat3, 1), 1.2)


def test_partition_bc_validation(lat3):
    b = sorted(lat3.boundary)
    with pytest.raises(ValueError):  # not covering
        BoundaryCondition.from_partition([b[:3]]).blocks_for(lat3)
    with pytest.raises(ValueError):  # overlap
        BoundaryCondition.from_partition([b, b[:1]]).blocks_for(lat3)
    ok = BoundaryCondition.from_partition([b[:4], b[4:]])
    assert len(ok.blocks_for(lat3)) == 2


def test_cluster_count_partition_between_extremes(lat3):
    b = sorted(lat3.boundary)
    partitions = [
        BoundaryCondition.from_partition([b]),
        BoundaryCondition.from_partition([b[:4], b[4:]]),
        BoundaryCondition.from_partition([[s] for s in b]),
    ]
    rng = RngStream(11)
    for cfg_bits in rng.integers(0, 1 << 12, size=200):
        states = np.array([(int(cfg_bits) >> e) & 1 for e in range(12)], dtype=np.uint8)
        omega = EdgeConfig(lat3, states)
        cl_w = label_clusters(omega, WIRED).count_with_bc
        cl_f = label_clusters(omega, FREE).count_with_bc
        for bc in partitions:
            cl_pi = label_clusters(omega, bc).count_with_bc
            assert cl_w <= cl_pi <= cl_f
        # singleton partition is the free count
        assert label_clusters(omega, partitions[2]).count_with_bc == cl_f
        # one-block partition is wired
        assert label_clusters(omega, partitions[0]).count_with_bc == cl_w


def test_cluster_sizes_sum(lat3):
    omega = EdgeConfig(lat3, (np.arange(12) % 2).astype(np.uint8))
    cs = label_clusters(omega)
    assert sum(cs.sizes.values()) == lat3.n_sites


# ---------------------------------------------------------------------------
# coupling maps


def test_couple_all_open_gives_all_plus(lat3):
    omega = EdgeConfig.constant(lat3, 1, bc=WIRED)
    sigma = couple_fk_to_spin(omega, RngStream(0))
    assert np.all(sigma.values == 1)


def test_couple_all_closed_center_fair(lat3):
    rng = RngStream(42)
    omega = EdgeConfig.constant(lat3, 0, bc=WIRED)
    ci = lat3.site_index[(1, 1)]
    hits = sum(couple_fk_to_spin(omega, rng).values[ci] == 1 for _ in range(10_000))
    assert abs(hits / 10_000 - 0.5) < 0.01


def test_couple_two_clusters_uniform_colorings():
    # two disjoint interior dominoes inside a closed sea on the 5-box
    lat = build_box(5)
    states = np.zeros(lat.n_edges, dtype=np.uint8)
    e1 = lat.edge_id((1, 1), (2, 1))
    e2 = lat.edge_id((1, 3), (2, 3))
    states[e1] = states[e2] = 1
    omega = EdgeConfig(lat, states, bc=WIRED)
    rng = RngStream(3)
    i1, i2 = lat.site_index[(1, 1)], lat.site_index[(1, 3)]
    counts = {}
    trials = 20_000
    for _ in range(trials):
        sigma = couple_fk_to_spin(omega, rng)
        key = (int(sigma.values[i1]), int(sigma.values[i2]))
        counts[key] = counts.get(key, 0) + 1
    assert set(counts) == {(1, 1), (1, -1), (-1, 1), (-1, -1)}
    for c in counts.values():
        assert abs(c / trials - 0.25) < 0.02


def test_couple_spin_to_fk_limits(lat3):
    rng = RngStream(5)
    sigma = SpinConfig.constant(lat3, 1)
    omega = couple_spin_to_fk(sigma, 1 - 1e-12, rng)
    assert omega.open_count() == 12
    # checkerboard disagrees across every edge
    v = np.array([1 if (x + y) % 2 == 0 else -1 for (x, y) in lat3.sites], dtype=np.int8)
    board = SpinConfig(lat3, v, bc="free")
    assert couple_spin_to_fk(board, 0.9, rng).open_count() == 0


def test_couple_spin_to_fk_bernoulli_rate(lat3):
    rng = RngStream(8)
    sigma = SpinConfig.constant(lat3, 1)
    total = sum(couple_spin_to_fk(sigma, 0.5, rng).open_count() for _ in range(10_000))
    assert abs(total / (10_000 * 12) - 0.5) < 0.01


def test_coupling_field_bias():
    # a negative field makes free clusters prefer -1, boundary ones stay +1
    lat = build_box(5)
    states = np.zeros(lat.n_edges, dtype=np.uint8)
    omega = EdgeConfig(lat, states, bc=WIRED)
    rng = RngStream(13)
    ci = lat.site_index[(2, 2)]
    hits = sum(
        couple_fk_to_spin(omega, rng, h=-1.0).values[ci] == 1 for _ in range(4000)
    )
    expect = 1.0 / (1.0 + math.exp(2.0))
    assert abs(hits / 4000 - expect) < 0.02
    sigma = couple_fk_to_spin(omega, rng, h=-1.0)
    assert np.all(sigma.values[lat.boundary_mask] == 1)


# ---------------------------------------------------------------------------
# sampler


def test_sampler_determinism():
    a = sample_fk(6, 0.55, sweeps=40, rng=RngStream(2024, 1))
    b = sample_fk(6, 0.55, sweeps=40, rng=RngStream(2024, 1))
    assert np.array_equal(a.states, b.states)
    c = sample_fk(6, 0.55, sweeps=40, rng=RngStream(2024, 2))
    assert not np.array_equal(a.states, c.states)


def test_sampler_dense_limit():
    omega = sample_fk(8, 0.995, sweeps=30, rng=RngStream(1))
    assert omega.open_count() / omega.lattice.n_edges > 0.97


def test_sampler_rejects_bad_args():
    with pytest.raises(ValueError):
        sample_fk(4, 0.5, sweeps=0, rng=RngStream(0))
    with pytest.raises(ValueError):
        FKSampler(build_box(4), 0.0)


def test_sampler_stationarity_chi2(lat3):
    # draw exact FK states, apply one alternation step, test the result
    # against the exact table
    p = 0.58
    g = fk_graph_of(lat3, WIRED)
    probs = g.probabilities(p)
    rng = RngStream(77)
    trials = 100_000
    start_cfgs = rng.choice(probs.size, size=trials, p=probs)
    counts = np.zeros(probs.size)
    for cfg in start_cfgs:
        states = np.array([(int(cfg) >> e) & 1 for e in range(12)], dtype=np.uint8)
        samp = FKSampler(lat3, p, bc=WIRED, rng=rng, start=EdgeConfig(lat3, states))
        out = samp.sweep()
        idx = int(np.dot(out.states.astype(np.int64), 1 << np.arange(12, dtype=np.int64)))
        counts[idx] += 1
    expected = probs * trials
    # aggregate the thin tail so every chi^2 cell has expectation >= 10
    order = np.argsort(expected)[::-1]
    exp_s, obs_s = expected[order], counts[order]
    keep = np.flatnonzero(np.cumsum(exp_s) <= trials - 10)
    k = keep[-1] + 1 if keep.size else 1
    obs = np.append(obs_s[:k], obs_s[k:].sum())
    exp = np.append(exp_s[:k], exp_s[k:].sum())
    stat, pval = chisquare(obs, exp * obs.sum() / exp.sum())
    assert pval > 0.001


# ---------------------------------------------------------------------------
# parameter maps and exact observables


def test_critical_fixed_points():
    assert dual_p(P_C) == pytest.approx(P_C, abs=1e-12)
    assert dual_beta(BETA_C) == pytest.approx(BETA_C, abs=1e-12)
    assert p_of_beta(BETA_C) == pytest.approx(P_C, abs=1e-12)
    assert P_C == pytest.approx(math.sqrt(2) / (1 + math.sqrt(2)), abs=1e-15)


def test_dual_p_example():
    assert dual_p(0.7) == pytest.approx(0.6 / 1.3, abs=1e-12)
    ph = dual_p(0.7)
    assert (0.7 / 0.3) * (ph / (1 - ph)) == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99))
def test_dual_p_involution(p):
    assert dual_p(dual_p(p)) == pytest.approx(p, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 3.0))
def test_dual_beta_involution(beta):
    assert dual_beta(dual_beta(beta)) == pytest.approx(beta, abs=1e-12)


def test_domain_rejection():
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            dual_p(bad)
    with pytest.raises(ValueError):
        dual_beta(0.0)
    with pytest.raises(ValueError):
        p_of_beta(-1.0)


def test_onsager_mstar():
    assert onsager_mstar(BETA_C) == 0.0
    assert onsager_mstar(0.3) == 0.0
    assert onsager_mstar(0.5) == pytest.approx(0.911319377877496, abs=1e-9)
    for beta in (0.45, 0.5, 0.7, 1.0):
        m = onsager_mstar(beta)
        s4 = math.sinh(2 * beta) ** 4
        assert m**8 * s4 + 1 == pytest.approx(s4, rel=1e-12)


def test_exact_tension():
    assert exact_tension(BETA_C) == 0.0
    assert exact_tension(0.5) == pytest.approx(0.2280631670946952, abs=1e-9)
    assert exact_tension(0.5) == pytest.approx(2 * 0.5 + math.log(math.tanh(0.5)), abs=1e-12)
    h = 1e-3
    slope = exact_tension(BETA_C + h) / h
    assert slope == pytest.approx(4.0, abs=0.02)


def test_beta_p_roundtrip():
    for p in (0.1, 0.5, P_C, 0.9):
        assert p_of_beta(beta_of_p(p)) == pytest.approx(p, abs=1e-12)


# ---------------------------------------------------------------------------
# enumeration oracles and the exhaustive coupling


def test_enumeration_normalization(lat3):
    g = fk_graph_of(lat3, WIRED)
    assert g.probabilities(0.5).sum() == pytest.approx(1.0, abs=1e-12)


def test_enumeration_ising_consistency(lat3):
    tab = model.enumerate_exact(lat3, beta=0.5)
    sigma = SpinConfig.constant(lat3, 1)
    assert tab.prob_of(lambda s: np.array_equal(s.values, sigma.values)) == pytest.approx(
        ising_prob(sigma, 0.5), abs=1e-12
    )


def test_enumeration_size_caps():
    with pytest.raises(OracleSizeError):
        model.fk_graph_of(build_box(5), WIRED)
    with pytest.raises(ValueError):
        model.enumerate_exact(build_box(3))


def test_es_joint_marginals(lat3):
    beta = 0.5
    es = EdwardsSokalJoint(lat3, beta)
    tab = IsingTable(lat3, beta)
    assert np.abs(es.spin_marginal - tab.probs).max() < 1e-10
    fk = fk_graph_of(lat3, WIRED).probabilities(p_of_beta(beta))
    assert np.abs(es.edge_marginal - fk).max() < 1e-10


def _touches_all_sides(lat, cfg):
    states = np.array([(cfg >> e) & 1 for e in range(lat.n_edges)], dtype=np.uint8)
    cs = label_clusters(EdgeConfig(lat, states, bc=FREE))
    n = lat.n
    grid = cs.labels.reshape(n, n)
    sides = [set(grid[0]), set(grid[-1]), set(grid[:, 0]), set(grid[:, -1])]
    return bool(sides[0] & sides[1] & sides[2] & sides[3])


def test_crossing_probability_monotone_in_p(lat3):
    g = fk_graph_of(lat3, FREE)
    mask = np.fromiter(
        (_touches_all_sides(lat3, cfg) for cfg in range(1 << 12)), dtype=bool, count=1 << 12
    )
    probs = [float(g.probabilities(p)[mask].sum()) for p in np.linspace(0.05, 0.95, 20)]
    assert all(b >= a - 1e-12 for a, b in zip(probs, probs[1:]))


def test_streaming_joint_matches_table(lat3):
    p = 0.61
    g = fk_graph_of(lat3, WIRED)
    direct = g.joint_open_cluster(p)
    streamed = model.graph_fk_joint_open_cluster(
        lat3.sites, lat3.edges, WIRED.blocks_for(lat3), p
    )
    assert np.abs(direct - streamed).max() < 1e-12


# ---------------------------------------------------------------------------
# snapshots


def test_snapshot_roundtrip_edges(tmp_path):
    lat = build_box(6)
    rng = RngStream(31)
    omega = sample_fk(lat, 0.6, sweeps=5, rng=rng)
    path = tmp_path / "state.wulf"
    save_config(omega, path, parameter=0.6)
    back, param = load_config(path)
    assert param == 0.6
    assert np.array_equal(back.states, omega.states)
    assert back.bc.kind == "wired"


def test_snapshot_roundtrip_spins(tmp_path):
    lat = build_box(5)
    sigma = couple_fk_to_spin(EdgeConfig.constant(lat, 0, bc=WIRED), RngStream(4))
    path = tmp_path / "spin.wulf"
    save_config(sigma, path, parameter=0.44)
    back, param = load_config(path)
    assert np.array_equal(back.values, sigma.values)
    assert back.bc == "plus"


def test_snapshot_checksum_detects_corruption(tmp_path):
    lat = build_box(4)
    path = tmp_path / "bad.wulf"
    save_config(EdgeConfig.constant(lat, 1), path)
    blob = bytearray(path.read_bytes())
    blob[10] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError):
        load_config(path)


# ---------------------------------------------------------------------------
# two-point estimator


def test_two_point_distance_zero():
    est, err = wulff.two_point_estimate(
        12, 0.2, (0, 0), samples=5, rng=RngStream(1), burn_in=5
    )
    assert est == 1.0


def test_two_point_rejects_supercritical():
    with pytest.raises(ValueError):
        wulff.two_point_estimate(12, 0.5, (1, 0), samples=5, rng=RngStream(1))


def test_two_point_tiny_beta_uncorrelated():
    est, err = wulff.two_point_estimate(
        16, 0.01, (5, 0), samples=40, rng=RngStream(6), burn_in=10
    )
    assert abs(est) < 0.02
