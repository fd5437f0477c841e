import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbba_etc.cbba import (Bid, Bundle, ConsensusKnowledge, build_bundle, ccbba_round,
                           claim_bundle, cluster_leaders, consensus_merge, flat_round,
                           kmeanspp_clusters, select_new_target, utility)
from cbba_etc.world import Color, ScenarioConfig, VictimState, World

from conftest import lone_robot

CFG = ScenarioConfig()


def make_world(positions, colors, n_robots=1):
    cfg = ScenarioConfig(n_victims=len(positions), n_robots=n_robots)
    w = World(cfg, np.random.default_rng(0))
    for s, (p, c) in enumerate(zip(positions, colors)):
        v = w.spawn_victim(s)
        v.position, v.wall_color = (float(p[0]), float(p[1])), Color(c)
        w.vpos[s], w.vcolor[s] = v.position, int(c)
    return w


# -- utility ------------------------------------------------------------------

def test_utility_values():
    r = lone_robot((0, 0), Color.RED)
    v = VictimState(0, (5.0, 0.0), Color.RED, 0.0)
    assert abs(utility(r, v, Color.RED, CFG) - 1 / (5 + 1e-6)) <= 1e-12
    assert abs(utility(r, v, Color.BLUE, CFG) - 0.1 / (5 + 1e-6)) <= 1e-12
    assert utility(r, VictimState(1, (0.0, 0.0), Color.RED, 0.0), Color.RED, CFG) == pytest.approx(1e6)
    # unknown color is scored as a match
    assert utility(r, v, None, CFG) == utility(r, v, Color.RED, CFG)
    r.mark_incompatible(0, 10.0)
    assert utility(r, v, Color.RED, CFG, now=5.0) == 0.0


# -- bundles ------------------------------------------------------------------

def test_empty_world_empty_bundle():
    w = make_world([], [])
    b = build_bundle(lone_robot(), w, ConsensusKnowledge(w.n_slots, 0), CFG)
    assert not b and b.head is None


def test_bundle_nearest_three_in_order():
    w = make_world([(d, 0) for d in (8, 2, 10, 4, 6)], [Color.RED] * 5)
    b = build_bundle(lone_robot(), w, ConsensusKnowledge(w.n_slots, 0), CFG)
    assert [w.vpos[x.slot][0] for x in b.bids] == [2, 4, 6]


def test_bundle_tie_lower_id_first():
    w = make_world([(0, 3), (3, 0)], [Color.RED] * 2)
    b = build_bundle(lone_robot(), w, ConsensusKnowledge(w.n_slots, 0), CFG)
    assert b.ids() == [0, 1]


def test_bundle_skips_foreign_winner_with_higher_bid():
    w = make_world([(2, 0), (4, 0)], [Color.RED] * 2)
    k = ConsensusKnowledge(w.n_slots, 0)
    k.record(Bid(0, 0, 10.0, 5, 0))
    b = build_bundle(lone_robot(), w, k, CFG)
    assert b.ids() == [1]


def greedy_oracle(robot, world, capacity):
    """Lexicographically best ordered selection, enumerated exhaustively."""
    vs = [world.victim_in_slot(s) for s in range(world.n_slots) if world.active[s]]
    scored = [(utility(robot, v, v.wall_color, CFG), v.id) for v in vs]
    best, best_key = (), None
    for seq in itertools.permutations(scored, min(capacity, len(scored))):
        key = [(u, -vid) for u, vid in seq]
        if best_key is None or key > best_key:
            best, best_key = seq, key
    return [vid for _, vid in best]


def test_build_bundle_matches_exhaustive_greedy():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        m = int(rng.integers(0, 7))
        pos = rng.integers(-6, 7, (m, 2))  # integer grid gives many exact ties
        w = make_world(pos, rng.integers(0, 3, m))
        r = lone_robot(tuple(rng.integers(-3, 4, 2)), Color(int(rng.integers(3))))
        cap = int(rng.integers(1, 4))
        cfg = CFG.replace(bundle_capacity=cap)
        got = build_bundle(r, w, ConsensusKnowledge(w.n_slots, 0), cfg)
        assert got.ids() == greedy_oracle(r, w, cap)


# -- single-robot merge -------------------------------------------------------

def _mine(k, slot, score, me=0, stamp=0):
    b = Bundle(3, [Bid(slot, slot, score, me, stamp)])
    claim_bundle(k, b, stamp)
    return b


def _payload_from(sender, n, slot, score, stamp=1):
    k = ConsensusKnowledge(n, sender)
    claim_bundle(k, Bundle(3, [Bid(slot, slot, score, sender, stamp)]), stamp)
    return k.snapshot(Bundle(3))


def test_outbid_drops_task():
    k = ConsensusKnowledge(2, 0)
    b = _mine(k, 1, 0.5)
    _, lost = consensus_merge(k, b, [(9, _payload_from(9, 2, 1, 0.7))])
    assert lost == 1 and not b and k.z[1] == 9


def test_equal_bids_lowest_id_wins():
    k2, k7 = ConsensusKnowledge(1, 2), ConsensusKnowledge(1, 7)
    b2, b7 = _mine(k2, 0, 0.5, me=2), _mine(k7, 0, 0.5, me=7)
    lost = flat_round([k2, k7], [b2, b7])
    assert lost == [0, 1]
    assert k2.z[0] == k7.z[0] == 2


def test_empty_inbox_keeps_own_bids():
    k = ConsensusKnowledge(3, 0)
    b = Bundle(3, [Bid(0, 0, 0.4, 0, 0), Bid(2, 2, 0.3, 0, 0)])
    _, lost = consensus_merge(k, b, [])
    assert lost == 0 and k.winners() == {0: 0, 2: 0}


def test_select_new_target():
    k = ConsensusKnowledge(2, 0)
    b = Bundle(3, [Bid(0, 0, 0.9, 0, 0), Bid(1, 1, 0.4, 0, 0)])
    claim_bundle(k, b, 0)
    k.z[0] = 4  # lost the first entry
    assert select_new_target(b, k).victim_id == 1
    assert select_new_target(Bundle(3), k) is None
    k.z[0] = 0
    assert select_new_target(b, k).victim_id == 0


# -- network rounds vs the brute-force winner oracle --------------------------

def random_instance(rng):
    n_r, n_t = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    bids = {}
    for i in range(n_r):
        tasks = [t for t in range(n_t) if rng.random() < 0.6]
        for t in tasks:
            bids[(i, t)] = float(rng.integers(1, 5)) / 4  # coarse values force ties
    return n_r, n_t, bids


def winner_oracle(n_t, bids):
    out = {}
    for t in range(n_t):
        cands = [(b, -i) for (i, tt), b in bids.items() if tt == t]
        if cands:
            out[t] = -max(cands)[1]
    return out


def setup(n_r, n_t, bids):
    ks = [ConsensusKnowledge(n_t, i) for i in range(n_r)]
    bs = [Bundle(4, [Bid(t, t, b, i, 0) for (ii, t), b in sorted(bids.items()) if ii == i])
          for i in range(n_r)]
    return ks, bs


def test_flat_and_clustered_rounds_match_oracle():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        n_r, n_t, bids = random_instance(rng)
        expect = winner_oracle(n_t, bids)
        ks, bs = setup(n_r, n_t, bids)
        flat_round(ks, bs)
        for i, k in enumerate(ks):
            assert k.winners() == expect
            assert set(bs[i].ids()) == {t for t, w in expect.items() if w == i}
        ks, bs = setup(n_r, n_t, bids)
        labels = rng.integers(0, 2, n_r)
        ccbba_round(ks, bs, labels)
        for i, k in enumerate(ks):
            assert k.winners() == expect
            assert set(bs[i].ids()) == {t for t, w in expect.items() if w == i}


def test_ccbba_member_out_of_range_excluded():
    bids = {(0, 0): 0.25, (1, 0): 0.75}
    ks, bs = setup(2, 1, bids)
    labels = np.array([0, 0])  # robot 0 leads robot 1
    connected = np.ones((2, 2), bool)
    connected[1, 0] = False  # leader cannot hear the member
    lost, msgs = ccbba_round(ks, bs, labels, connected=connected)
    assert ks[0].winners() == {0: 0}
    assert msgs == 3


def test_ccbba_message_count():
    ks, bs = setup(4, 2, {(0, 0): 0.5, (3, 1): 0.5})
    _, msgs = ccbba_round(ks, bs, np.array([0, 0, 1, 1]))
    # 2 member reports, 2 leader exchanges, 2 disseminations
    assert msgs == 6


# -- clustering -----------------------------------------------------------------

def exhaustive_two_partition(pts):
    n = len(pts)
    best, best_cost = None, math.inf
    for mask in range(1, 2 ** (n - 1)):
        lab = np.array([(mask >> i) & 1 for i in range(n)])
        cost = sum(((pts[lab == c] - pts[lab == c].mean(axis=0)) ** 2).sum() for c in (0, 1))
        if cost < best_cost:
            best, best_cost = lab, cost
    return best


def same_partition(a, b):
    return all((a[i] == a[j]) == (b[i] == b[j]) for i in range(len(a)) for j in range(len(a)))


def test_kmeans_two_groups_match_exhaustive():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g1 = rng.normal(0, 1, (6, 2))
        g2 = rng.normal(0, 1, (6, 2)) + (40, 0)
        pts = np.vstack([g1, g2])
        lab = kmeanspp_clusters(pts, 2, rng)
        assert same_partition(lab, exhaustive_two_partition(pts))


def test_kmeans_degenerate_k():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-10, 10, (7, 2))
    assert set(kmeanspp_clusters(pts, 1, rng)) == {0}
    lab = kmeanspp_clusters(pts, 7, rng)
    assert len(set(lab)) == 7
    with pytest.raises(ValueError):
        kmeanspp_clusters(pts, 8, rng)


def test_cluster_leaders_lowest_alive():
    labels = np.array([1, 0, 1, 0])
    alive = np.array([False, True, True, True])
    assert cluster_leaders(labels, alive) == {0: 1, 1: 2}


@given(st.integers(0, 10_000))
def test_round_winners_consistent_across_robots(seed):
    n_r, n_t, bids = random_instance(np.random.default_rng(seed))
    ks, bs = setup(n_r, n_t, bids)
    flat_round(ks, bs)
    claimed = [t for b in bs for t in b.ids()]
    assert len(claimed) == len(set(claimed))  # no task in two bundles
