import random

import pytest

from memestream.evaluation import (Cover, MetricsReport, bench_report,
                                   compare_exact, lfk_nmi, read_cover,
                                   write_cover)

from reference_lfk import reference_nmi


def cover(*sets):
    return Cover.from_mapping([(str(i), s) for i, s in enumerate(sets)])


def test_identical_covers_score_one():
    a = cover({1, 2, 3, 4}, {5, 6, 7, 8})
    assert lfk_nmi(a, a) == pytest.approx(1.0, abs=1e-12)


def test_unrelated_covers_score_near_zero():
    rng = random.Random(0)
    elems = list(range(200))
    a = cover(*[set(elems[i::4]) for i in range(4)])
    shuffled = elems[:]
    rng.shuffle(shuffled)
    b = cover(*[set(shuffled[i::4]) for i in range(4)])
    assert lfk_nmi(a, b) < 0.1


def test_moved_element_scores_between():
    a = cover({1, 2, 3, 4}, {5, 6, 7, 8})
    b = cover({1, 2, 3}, {4, 5, 6, 7, 8})
    score = lfk_nmi(a, b)
    assert 0.0 < score < 1.0
    assert score == pytest.approx(
        reference_nmi([s for _, s in a.clusters], [s for _, s in b.clusters]),
        abs=1e-9)


def test_single_all_elements_cluster_is_valid():
    a = cover({1, 2, 3})
    b = cover({1, 2}, {3})
    assert 0.0 <= lfk_nmi(a, b) <= 1.0


def test_disjoint_universes_defined():
    a = cover({1, 2})
    b = cover({3, 4})
    assert lfk_nmi(a, b) <= 0.05


def test_empty_cover_rejected():
    with pytest.raises(ValueError):
        lfk_nmi(cover(), cover({1}))


def random_cover(rng, elems, max_clusters=6):
    n = rng.randint(1, max_clusters)
    out = []
    for _ in range(n):
        size = rng.randint(1, max(1, len(elems) - 1))
        out.append(set(rng.sample(elems, size)))
    return out


def test_matches_reference_on_random_overlapping_covers():
    rng = random.Random(42)
    for trial in range(100):
        elems = list(range(rng.randint(4, 30)))
        a = random_cover(rng, elems)
        b = random_cover(rng, elems)
        mine = lfk_nmi(cover(*a), cover(*b))
        ref = reference_nmi(a, b)
        assert mine == pytest.approx(max(0.0, min(1.0, ref)), abs=1e-9), trial


def test_symmetry_and_permutation_invariance():
    rng = random.Random(7)
    elems = list(range(25))
    a_sets = random_cover(rng, elems)
    b_sets = random_cover(rng, elems)
    a, b = cover(*a_sets), cover(*b_sets)
    assert lfk_nmi(a, b) == pytest.approx(lfk_nmi(b, a), abs=1e-12)
    perm = {e: p for e, p in zip(elems, rng.sample(elems, len(elems)))}
    a2 = cover(*[{perm[e] for e in s} for s in a_sets])
    b2 = cover(*[{perm[e] for e in s} for s in b_sets])
    assert lfk_nmi(a2, b2) == pytest.approx(lfk_nmi(a, b), abs=1e-12)
    assert lfk_nmi(cover(*reversed(a_sets)), b) == pytest.approx(
        lfk_nmi(a, b), abs=1e-12)


def test_compare_exact():
    a = cover({1, 2}, {3})
    same_permuted = cover({3}, {2, 1})
    ok, report = compare_exact(a, same_permuted)
    assert ok and report == []
    moved = cover({1}, {2, 3})
    ok, report = compare_exact(a, moved)
    assert not ok
    assert any("2" in line for line in report)


def test_cover_io_roundtrip(tmp_path):
    path = tmp_path / "cover.jsonl"
    write_cover(path, {"a": {"t1", "t2"}, "b": {"t3"}, "empty": set()})
    back = read_cover(path)
    assert {name for name, _ in back.clusters} == {"a", "b"}
    assert {frozenset(s) for _, s in back.clusters} == {
        frozenset({"t1", "t2"}), frozenset({"t3"})}


def rows_fixture():
    return [
        {"batch_seq": 0, "compute_time_s": 0.2, "sync_time_s": 0.1,
         "message_bytes": 100},
        {"batch_seq": 1, "compute_time_s": 0.4, "sync_time_s": 0.1,
         "message_bytes": 300},
    ]


def test_metrics_aggregates_recomputable():
    m = MetricsReport(rows=rows_fixture(), total_time_s=1.5)
    assert m.comp_over_sync_ratio == pytest.approx(0.6 / 0.2)
    assert m.avg_message_bytes == pytest.approx(200)
    obj = m.to_obj()
    assert obj["aggregates"]["comp_over_sync_ratio"] == pytest.approx(
        sum(r["compute_time_s"] for r in obj["per_batch"])
        / sum(r["sync_time_s"] for r in obj["per_batch"]))
    assert obj["aggregates"]["avg_message_bytes"] == pytest.approx(
        sum(r["message_bytes"] for r in obj["per_batch"])
        / len(obj["per_batch"]))


def test_bench_report_rows_and_speedup():
    runs = []
    for strategy in ("cluster_delta", "full_centroids"):
        for w, total in ((1, 8.0), (2, 4.4), (4, 2.5)):
            m = MetricsReport(rows=rows_fixture(), total_time_s=total)
            runs.append(({"workers": w, "strategy": strategy,
                          "batch_size": 40}, m))
    table, rows = bench_report(runs)
    assert len(rows) == 6
    by_key = {(r["workers"], r["strategy"]): r for r in rows}
    assert by_key[(1, "cluster_delta")]["speedup_vs_1worker"] == pytest.approx(1.0)
    assert by_key[(4, "cluster_delta")]["speedup_vs_1worker"] == pytest.approx(3.2)
    assert "comp/sync" in table


def test_bench_report_single_run_has_no_speedup():
    m = MetricsReport(rows=rows_fixture(), total_time_s=0.0)
    table, rows = bench_report([({"workers": 2, "strategy": "cluster_delta",
                                  "batch_size": 4}, m)])
    assert rows[0]["speedup_vs_1worker"] is None
