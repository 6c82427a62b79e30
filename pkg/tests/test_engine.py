"""Bootstrap topology, cycle mechanics, churn injection, determinism."""

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse import csgraph

from gossipcf.engine import (
    ChurnSpec,
    InvalidConfig,
    SimConfig,
    bootstrap,
    bootstrap_topology,
    inject_churn,
    join_peer,
    run_cycle,
    run_simulation,
)
from gossipcf.harness import all_but_1_split, split_seed
from gossipcf.recommend import build_training_arrays


def _arrays(matrix):
    return build_training_arrays(matrix)


def _weakly_connected(topology) -> bool:
    n = len(topology)
    rows, cols = [], []
    for v, outs in enumerate(topology):
        for u in outs:
            rows.append(v)
            cols.append(u)
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, _ = csgraph.connected_components(adj, directed=True, connection="weak")
    return n_comp == 1


def test_bootstrap_topology_full_scale_properties():
    rng = np.random.default_rng(4)
    topo = bootstrap_topology(943, 2.494, cache_size=20, rng=rng)
    degrees = np.array([len(outs) for outs in topo])
    mean_deg = degrees.mean()
    assert 2.494 - 0.05 <= mean_deg <= 2.494 + 0.05
    assert _weakly_connected(topo)
    assert degrees.max() < 20  # no cache starts full
    assert degrees.std() > 0.5  # intentionally unbalanced
    assert all(v not in topo[v] for v in range(943))


def test_bootstrap_topology_two_peers_mutual():
    rng = np.random.default_rng(0)
    topo = bootstrap_topology(2, 1.0, cache_size=5, rng=rng)
    assert topo == [[1], [0]]


def test_bootstrap_topology_deterministic():
    a = bootstrap_topology(200, 2.494, 20, np.random.default_rng(9))
    b = bootstrap_topology(200, 2.494, 20, np.random.default_rng(9))
    assert a == b


def test_bootstrap_topology_rejects_bad_degree():
    rng = np.random.default_rng(1)
    with pytest.raises(InvalidConfig):
        bootstrap_topology(10, 0.5, 20, rng)
    with pytest.raises(InvalidConfig):
        bootstrap_topology(10, 25.0, 20, rng)


def test_config_validation():
    SimConfig(n_peers=10).validate()
    with pytest.raises(InvalidConfig):
        SimConfig(n_peers=1).validate()
    with pytest.raises(InvalidConfig):
        SimConfig(n_peers=10, cache_size=0).validate()
    with pytest.raises(InvalidConfig):
        SimConfig(n_peers=10, cycles=0).validate()
    with pytest.raises(InvalidConfig):
        SimConfig(n_peers=10, protocol="carrier-pigeon").validate()
    with pytest.raises(InvalidConfig):
        SimConfig(n_peers=10, churn=ChurnSpec(pct=120.0, at_cycle=5)).validate()
    with pytest.raises(InvalidConfig):
        SimConfig(n_peers=10, cycles=10, churn=ChurnSpec(pct=5.0, at_cycle=40)).validate()


def _small_sim(small_ratings, **kwargs):
    defaults = dict(n_peers=80, cache_size=8, cycles=12, seed=3)
    defaults.update(kwargs)
    config = SimConfig(**defaults)
    split_rng = np.random.Generator(np.random.PCG64(split_seed(config.seed, 0)))
    arrays = _arrays(all_but_1_split(small_ratings, split_rng).training)
    return config, arrays


def test_cycle_conservation_and_one_initiation_each(small_ratings):
    config, arrays = _small_sim(small_ratings)
    snaps = list(run_simulation(config, arrays))
    assert len(snaps) == config.cycles + 1
    for snap in snaps[1:]:
        alive = int(snap.alive.sum())
        # every alive peer initiates once; receptions match non-skipped initiations
        assert snap.receptions.sum() == alive - snap.skipped
        assert snap.skipped == 0  # churn-free, connected: nobody skips


def test_snapshot_caches_respect_capacity_and_uniqueness(small_ratings):
    config, arrays = _small_sim(small_ratings)
    for snap in run_simulation(config, arrays):
        for v in range(config.n_peers):
            ids = snap.neighbor_ids[v]
            assert ids.size <= config.cache_size
            assert np.unique(ids).size == ids.size
            assert not (ids == v).any()


def test_cache_fill_monotone_until_full(small_ratings):
    config, arrays = _small_sim(small_ratings)
    sizes_prev = None
    full_seen = False
    for snap in run_simulation(config, arrays):
        sizes = np.array([len(snap.neighbor_ids[v]) for v in range(config.n_peers)])
        if sizes_prev is not None and not full_seen:
            assert (sizes >= sizes_prev).all()
        full_seen = sizes.min() >= config.cache_size
        sizes_prev = sizes


def test_simulation_deterministic(small_ratings):
    config, arrays = _small_sim(small_ratings)
    def fingerprint():
        out = []
        for snap in run_simulation(config, arrays):
            out.append(
                (
                    snap.cycle,
                    tuple(tuple(ids.tolist()) for ids in snap.neighbor_ids),
                    snap.rec_items.tobytes(),
                    snap.receptions.tobytes(),
                )
            )
        return out
    assert fingerprint() == fingerprint()


def test_protocol_variants_share_snapshot_schema(small_ratings):
    for protocol in ("swarmix", "newscast", "anti-entropy"):
        config, arrays = _small_sim(small_ratings, protocol=protocol, cycles=3)
        snaps = list(run_simulation(config, arrays))
        assert len(snaps) == 4
        assert snaps[-1].rec_items.shape == (80, config.top_n)


def test_churn_marks_expected_count(small_ratings):
    config, arrays = _small_sim(
        small_ratings, cycles=10, churn=ChurnSpec(mode="failures", pct=20.0, at_cycle=5)
    )
    snaps = list(run_simulation(config, arrays))
    for snap in snaps:
        dead = int((~snap.alive).sum())
        if snap.cycle < 5:
            assert dead == 0
        else:
            assert dead == int(0.20 * 80)
            assert not snap.left.any()  # failures do not set the left flag


def test_churn_zero_is_noop(small_ratings):
    config, arrays = _small_sim(
        small_ratings, cycles=6, churn=ChurnSpec(mode="failures", pct=0.0, at_cycle=3)
    )
    for snap in run_simulation(config, arrays):
        assert snap.alive.all()


def test_failures_and_leavings_kill_identical_peers(small_ratings):
    dead_sets = {}
    for mode in ("failures", "leavings"):
        config, arrays = _small_sim(
            small_ratings, cycles=8, churn=ChurnSpec(mode=mode, pct=25.0, at_cycle=4)
        )
        snaps = list(run_simulation(config, arrays))
        dead_sets[mode] = frozenset(np.flatnonzero(~snaps[-1].alive).tolist())
        left = frozenset(np.flatnonzero(snaps[-1].left).tolist())
        assert left == (dead_sets[mode] if mode == "leavings" else frozenset())
    assert dead_sets["failures"] == dead_sets["leavings"]


def test_no_resurrection_and_dead_never_respond(small_ratings):
    config, arrays = _small_sim(
        small_ratings, cycles=12, churn=ChurnSpec(mode="failures", pct=40.0, at_cycle=5)
    )
    dead = None
    for snap in run_simulation(config, arrays):
        if snap.cycle == 5:
            dead = ~snap.alive
        if dead is not None and snap.cycle >= 5:
            assert (~snap.alive[dead]).all()  # nobody comes back
            assert (snap.receptions[dead] == 0).all()
            assert (snap.rec_items[dead] == -1).all()


def test_dead_entries_linger_in_live_caches(small_ratings):
    # No eager cleanup: entries pointing at silenced peers survive until
    # displaced by selection.
    config, arrays = _small_sim(
        small_ratings, cycles=7, churn=ChurnSpec(mode="failures", pct=50.0, at_cycle=6)
    )
    snaps = list(run_simulation(config, arrays))
    final = snaps[-1]
    dead = ~final.alive
    pointing_at_dead = 0
    for v in np.flatnonzero(final.alive):
        pointing_at_dead += int(dead[final.neighbor_ids[v]].sum())
    assert pointing_at_dead > 0


def test_churn_request_beyond_alive_raises(small_ratings):
    config, arrays = _small_sim(small_ratings, cycles=4)
    state = bootstrap(config, arrays, np.random.default_rng(0))
    inject_churn(state, ChurnSpec(mode="failures", pct=90.0, at_cycle=1))
    with pytest.raises(InvalidConfig):
        inject_churn(state, ChurnSpec(mode="failures", pct=50.0, at_cycle=2))


def test_churn_count_is_floor_of_pct_at_full_scale():
    # floor(0.20 * 943) = 188 silenced peers
    from gossipcf.engine import SimState
    from gossipcf.pushpull import GossipState

    n = 943
    state = SimState(
        config=SimConfig(n_peers=n),
        gossip=GossipState(caches=[()] * n, neighbors=[None] * n, alive=[True] * n),
        left=[False] * n,
        profiles=[],
        arrays=None,
        protocol=None,
        rng=np.random.default_rng(3),
    )
    silenced = inject_churn(state, ChurnSpec(mode="failures", pct=20.0, at_cycle=1))
    assert len(silenced) == 188
    assert sum(1 for a in state.gossip.alive if not a) == 188


def test_join_grows_cache_monotonically_to_full(small_ratings):
    config, arrays = _small_sim(small_ratings, cycles=1)
    rng = np.random.Generator(np.random.PCG64(7))
    holdout = frozenset({79})
    state = bootstrap(config, arrays, rng, holdout=holdout)
    assert not state.gossip.alive[79]
    assert all(79 not in [it.src for it in c] for c in state.gossip.caches)
    join_peer(state, 79, buddy=0)
    assert [it.src for it in state.gossip.caches[79]] == [0]
    sizes = [1]
    for _ in range(15):
        run_cycle(state)
        sizes.append(len(state.gossip.caches[79]))
    until_full = [s for s in sizes if s < config.cache_size]
    assert sizes[-1] == config.cache_size  # reached a full cache
    assert until_full == sorted(until_full)  # monotone growth until full


def test_global_view_protocol_draws_any_peer(small_ratings):
    config, arrays = _small_sim(small_ratings, protocol="anti-entropy", cycles=2)
    snaps = list(run_simulation(config, arrays))
    for snap in snaps[1:]:
        assert snap.receptions.sum() == int(snap.alive.sum())


def test_similarity_utility_scores_the_item_snapshot(small_ratings):
    # the table-backed utility must agree with scoring the profile snapshot
    # carried inside each item (profiles are immutable for the whole run)
    from gossipcf.engine import make_protocol
    from gossipcf.swarmix import cosine_similarity, make_self_item

    config, arrays = _small_sim(small_ratings)
    profiles = arrays.matrix.profiles()
    protocol = make_protocol(config, arrays, profiles)
    rng = np.random.default_rng(12)
    for _ in range(100):
        owner, src = rng.integers(80, size=2)
        item = make_self_item(int(src), profiles[int(src)], now=int(rng.integers(50)))
        table_score = protocol.utility_for(int(owner))(item)
        from_snapshot = (
            1.0
            if owner == src
            else cosine_similarity(profiles[int(owner)], item.payload)
        )
        assert table_score == pytest.approx(from_snapshot, abs=1e-12)
