import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from memestream.cluster import (Centroid, Cluster, ClusterState, OnlineStats,
                                Params, assign, outlier_test, process_protomeme,
                                replace_cluster, similarity)
from memestream.protomeme import Marker, Protomeme
from memestream.sparse import ConsistencyError, SparseVector


def pm(marker_value, tids=("1",), uids=("a",), content=None, diffusion=None,
       created=100, ending=None, step=0, kind="hashtag"):
    diffusion = set(diffusion or ()) | set(uids)
    return Protomeme(
        marker=Marker(kind, marker_value),
        v_tid=SparseVector({f"t:{t}": 1 for t in tids}),
        v_uid=SparseVector({f"u:{u}": 1 for u in uids}),
        v_content=SparseVector({f"w:{w}": c for w, c in (content or {}).items()}),
        v_diffusion=SparseVector({f"u:{u}": 1 for u in diffusion}),
        created_ts=created,
        ending_ts=ending if ending is not None else created,
        step_index=step,
    )


def params(k=4, l=6, n=2.0, seed=0):
    return Params(k=k, step_len=30, window_steps=l, nsigma=n, seed=seed)


# -- online statistics -------------------------------------------------------

def test_stats_single_sample():
    s = OnlineStats()
    s.add(0.5)
    assert s.mean == 0.5 and s.sigma == 0.0


def test_stats_two_samples_population_sigma():
    s = OnlineStats()
    s.add(0.5)
    s.add(0.7)
    assert s.mean == pytest.approx(0.6)
    assert s.sigma == pytest.approx(0.1)


def test_stats_four_samples():
    s = OnlineStats()
    for x in (1, 2, 3, 4):
        s.add(x)
    assert s.mean == pytest.approx(2.5)
    assert s.sigma == pytest.approx(math.sqrt(1.25))  # ~1.118034


def test_stats_rejects_non_finite():
    s = OnlineStats()
    with pytest.raises(ValueError):
        s.add(float("nan"))
    with pytest.raises(ValueError):
        s.add(float("inf"))


@given(st.lists(st.floats(min_value=0, max_value=1, allow_nan=False), min_size=1,
                max_size=300))
def test_stats_matches_two_pass(xs):
    s = OnlineStats()
    for x in xs:
        s.add(x)
    mean = sum(xs) / len(xs)
    var = sum((x - mean) ** 2 for x in xs) / len(xs)
    assert s.mean == pytest.approx(mean, rel=1e-12, abs=1e-12)
    assert s.sigma == pytest.approx(math.sqrt(var), rel=1e-9, abs=1e-12)


# -- outlier rule -------------------------------------------------------------

def test_outlier_rule_examples():
    assert outlier_test(0.35, 0.6, 0.1, 2) is True   # 0.35 <= 0.4
    assert outlier_test(0.45, 0.6, 0.1, 2) is False
    # boundary is inclusive (exact-in-binary numbers: 0.5 - 2*0.125 = 0.25)
    assert outlier_test(0.25, 0.5, 0.125, 2) is True
    # cold start: mean = sigma = 0
    assert outlier_test(0.0, 0.0, 0.0, 2) is True
    assert outlier_test(0.01, 0.0, 0.0, 2) is False


# -- similarity ----------------------------------------------------------------

def test_similarity_self_is_one():
    c = Cluster(0)
    p = pm("x", content={"a": 2})
    c.add(p)
    assert similarity(p, c) == 1.0


def test_similarity_disjoint_zero():
    c = Cluster(0)
    c.add(pm("x", tids=("1",), uids=("a",)))
    other = pm("y", tids=("2",), uids=("b",))
    assert similarity(other, c) == 0.0


def test_similarity_takes_max_across_spaces():
    c = Cluster(0)
    c.add(pm("x", tids=("1", "2", "3", "4"), uids=("a", "b"),
             content={"w1": 1, "w2": 1}))
    probe = pm("y", tids=("1",), uids=("a", "c"), content={"w1": 1, "w3": 1})
    per_space = []
    cen = c.centroid
    for vec, (sums, sq) in zip(
            (probe.v_tid, probe.v_uid, probe.v_content, probe.v_diffusion),
            cen.spaces()):
        acc = sum(w * sums.get(k, 0) for k, w in vec.entries.items())
        per_space.append(acc / (vec.norm() * math.sqrt(sq)) if acc else 0.0)
    assert similarity(probe, c) == pytest.approx(max(per_space))


def test_similarity_empty_cluster_is_zero():
    assert similarity(pm("x"), Cluster(0)) == 0.0


# -- centroid bookkeeping -------------------------------------------------------

def test_cluster_add_merges_content_dimensionality():
    c = Cluster(0)
    c.add(pm("x", content={"a": 1, "b": 1}))
    c.add(pm("y", content={"b": 1, "c": 1}))
    # overlap on one dimension: dimensionality |d1| + |d2| - 1
    assert len(c.centroid.content) == 3
    assert c.centroid.content == {"w:a": 1, "w:b": 2, "w:c": 1}


def test_cluster_add_then_remove_restores():
    c = Cluster(0)
    base = pm("x", content={"a": 3})
    extra = pm("y", tids=("2",), content={"a": 1, "b": 2}, ending=150)
    c.add(base)
    before = ({k: dict(getattr(c.centroid, k)) for k in Centroid.SPACES},
              c.centroid.count, c.last_update_ts)
    c.add(extra)
    c.members.remove(extra)  # emulate expiry of the newest member
    c.centroid.remove(extra)
    c.markers[extra.marker] -= 1
    c.refresh_last_update()
    after = ({k: dict(getattr(c.centroid, k)) for k in Centroid.SPACES},
             c.centroid.count, c.last_update_ts)
    assert before == after


def test_centroid_remove_unknown_dimension_raises():
    c = Centroid()
    c.add(pm("x"))
    with pytest.raises(ConsistencyError):
        c.remove(pm("y", tids=("99",)))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from("abcdef"),
                          st.integers(min_value=1, max_value=5)),
                min_size=1, max_size=30))
def test_centroid_incremental_matches_rebuild(ops):
    cen = Centroid()
    live = []
    for i, (letter, weight) in enumerate(ops):
        p = pm(f"m{i}", tids=(str(i),), content={letter: weight})
        cen.add(p)
        live.append(p)
        if len(live) > 4:
            cen.remove(live.pop(0))
    rebuilt = Centroid()
    for p in live:
        rebuilt.add(p)
    for space in Centroid.SPACES:
        a = getattr(cen, space)
        b = getattr(rebuilt, space)
        assert set(a) == set(b)
        for k in a:
            assert abs(a[k] - b[k]) <= 1e-9
        assert getattr(cen, space + "_sq") == getattr(rebuilt, space + "_sq")


# -- assignment ----------------------------------------------------------------

def fresh_state(k=4):
    return ClusterState.initial(params(k=k))


def test_assign_marker_hit_short_circuits():
    state = fresh_state()
    p0 = pm("x")
    state.cluster_of(2).add(p0)
    state.note_protomeme(p0, 2)
    # another cluster would win on similarity, but the marker map decides
    rich = pm("x", tids=("9",), uids=("z",), step=1)
    state.cluster_of(1).add(rich)
    d = assign(state, pm("x", tids=("9",), uids=("z",), step=2), 0.0, 0.0, 2.0)
    assert d.kind == "marker" and d.uid == 2


def test_assign_tie_breaks_to_lowest_slot():
    state = fresh_state()
    a = pm("a", tids=("1",))
    b = pm("b", tids=("2",))
    state.cluster_of(1).add(a)
    state.note_protomeme(a, 1)
    state.cluster_of(3).add(b)
    state.note_protomeme(b, 3)
    probe = pm("c", tids=("1", "2"), step=1)
    d = assign(state, probe, 0.0, 0.0, 2.0)
    assert d.kind == "nearest" and d.uid == 1


def test_assign_matches_brute_force(small_synth):
    from memestream.ingest import StepStream, SYNTH_EPOCH
    from memestream.protomeme import RetweetIndex, generate_protomemes

    tweets, _ = small_synth
    batches = list(StepStream(tweets[:400], 30, SYNTH_EPOCH))
    idx = RetweetIndex(6)
    idx.update(batches[0])
    npl = generate_protomemes(batches[0], idx)
    state = fresh_state(k=5)
    for slot, p in enumerate(npl[:5]):
        state.cluster_of(slot).add(p)
    for probe in npl[5:25]:
        d = assign(state, probe, 0.9, 0.1, 2.0)
        sims = [similarity(probe, state.clusters[i]) for i in range(5)]
        best = max(sims)
        arg = sims.index(best)
        if probe.marker in state.marker_map:
            assert d.kind == "marker"
        elif outlier_test(best, 0.9, 0.1, 2.0):
            assert d.kind == "outlier" and d.sim == best
        else:
            assert (d.kind, d.uid, d.sim) == ("nearest", arg, best)


def test_assign_all_empty_is_outlier_zero():
    d = assign(fresh_state(), pm("x"), 0.0, 0.0, 2.0)
    assert d == ("outlier", None, 0.0)


# -- replacement ----------------------------------------------------------------

def test_replace_prefers_empty_slot():
    state = fresh_state()
    for slot in (0, 1, 2):
        p = pm(f"m{slot}", tids=(str(slot),))
        state.cluster_of(slot).add(p)
        state.note_protomeme(p, slot)
    newc = Cluster(-1)
    newc.add(pm("new", tids=("9",), step=1))
    assert replace_cluster(state, newc) == 3
    assert state.clusters[3] is newc and newc.uid == 4


def test_replace_evicts_least_recently_updated():
    state = fresh_state(k=3)
    for slot, ts in enumerate((110, 105, 108)):
        p = pm(f"m{slot}", tids=(str(slot),), created=100, ending=ts)
        state.cluster_of(slot).add(p)
        state.note_protomeme(p, slot)
    newc = Cluster(-1)
    newc.add(pm("new", tids=("9",), step=1))
    assert replace_cluster(state, newc) == 1


def test_replace_purges_marker_map():
    state = fresh_state(k=1)
    p = pm("old")
    state.cluster_of(0).add(p)
    state.note_protomeme(p, 0)
    dead_uid = state.clusters[0].uid
    newc = Cluster(-1)
    newc.add(pm("new", tids=("5",), step=1))
    replace_cluster(state, newc)
    assert dead_uid not in {uid for uid in state.marker_map.values()}
    assert state.by_uid == {newc.uid: 0}


# -- window expiry ----------------------------------------------------------------

def add_step_protomeme(state, value, step, slot):
    p = pm(value, tids=(f"{value}{step}",), created=100 + step * 30,
           step=step)
    state.cluster_of(slot).add(p)
    state.note_protomeme(p, slot)
    return p


def test_expire_window_arithmetic():
    state = ClusterState.initial(params(k=2, l=6))
    state.expire_to(0)
    p_old = add_step_protomeme(state, "a", 0, 0)
    for step in range(1, 6):
        add_step_protomeme(state, "a", step, 0)
        state.expire_to(step)
    assert state.clusters[0].count == 6
    state.expire_to(6)  # step 0 falls out
    assert state.clusters[0].count == 5
    assert p_old not in state.clusters[0].members


def test_expiring_only_member_empties_cluster():
    state = ClusterState.initial(params(k=2, l=1))
    state.expire_to(0)
    add_step_protomeme(state, "a", 0, 0)
    state.expire_to(2)
    c = state.clusters[0]
    assert c.count == 0
    assert c.last_update_ts is None
    assert all(not getattr(c.centroid, s) for s in Centroid.SPACES)
    assert Marker("hashtag", "a") not in state.marker_map


def test_expire_only_forward():
    state = ClusterState.initial(params())
    state.expire_to(5)
    with pytest.raises(ValueError):
        state.expire_to(4)


def test_marker_map_survives_via_other_live_protomemes():
    # marker lives in the window through an orphaned protomeme: map entry stays
    state = ClusterState.initial(params(k=1, l=10))
    state.expire_to(0)
    p1 = pm("m", tids=("1",), step=0)
    state.add_to_cluster(0, p1)
    newc = Cluster(-1)
    newc.add(pm("other", tids=("2",), step=0))
    replace_cluster(state, newc)  # p1 orphaned, marker map purged of uid 0
    assert Marker("hashtag", "m") not in state.marker_map
    p2 = pm("m", tids=("3",), step=1)
    state.add_to_cluster(newc.uid, p2)
    state.expire_to(2)
    assert state.marker_map[Marker("hashtag", "m")] == newc.uid


def test_random_replay_matches_from_scratch_rebuild(small_batches, small_params):
    """After any prefix, incrementally maintained cluster state equals a naive
    recompute from the surviving window protomemes."""
    from memestream.cluster import run_sequential

    rng = random.Random(0)
    checkpoints = sorted(rng.sample(range(len(small_batches)), 4))

    def check(state, batch):
        if batch.step_index not in checkpoints:
            return
        cutoff = state.current_step - state.params.window_steps
        live_by_uid = {}
        for step, entries in state.window:
            assert step > cutoff
            for p, uid in entries:
                live_by_uid.setdefault(uid, []).append(p)
        for cluster in state.clusters:
            expect = live_by_uid.get(cluster.uid, [])
            assert list(cluster.members) == expect
            rebuilt = Centroid()
            for p in expect:
                rebuilt.add(p)
            for space in Centroid.SPACES:
                a, b = getattr(cluster.centroid, space), getattr(rebuilt, space)
                assert set(a) == set(b)
                for k in a:
                    assert abs(a[k] - b[k]) <= 1e-9
            assert cluster.last_update_ts == (
                max(p.ending_ts for p in expect) if expect else None)
            # no member older than the window
            for p in expect:
                assert p.step_index > cutoff

    run_sequential(iter(small_batches), small_params, on_step=check)


def test_nonempty_clusters_bounded_by_k(small_batches, small_params):
    from memestream.cluster import run_sequential

    def check(state, batch):
        assert sum(1 for c in state.clusters if c.count) <= state.params.k
        assert len(state.clusters) == state.params.k

    run_sequential(iter(small_batches), small_params, on_step=check)


def test_process_protomeme_outlier_creates_singleton():
    state = ClusterState.initial(params(k=2, n=2.0))
    state.expire_to(0)
    for _ in range(50):
        state.stats.add(0.9)  # tight stats: anything below ~0.9 is an outlier
    p1 = pm("a", tids=("1",))
    d = process_protomeme(state, p1, 2.0)
    assert d.kind == "outlier"
    assert any(c.count == 1 for c in state.clusters)
