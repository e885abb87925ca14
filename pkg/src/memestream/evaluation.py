"""Cover comparison (overlap-aware NMI and exact equality) and benchmark
metrics reporting.

The NMI variant treats each cluster as a binary membership variable over the
element universe (the union of both covers) and scores how well each
cluster's best admissible counterpart in the other cover predicts it:

    score = 1 - (H(A|B)_norm + H(B|A)_norm) / 2

where H(X|B) takes the minimum conditional entropy over B's clusters,
subject to the admissibility constraint h(p11)+h(p00) >= h(p01)+h(p10)
(a cluster must explain membership, not its complement), falling back to
the unconditional entropy H(X) when no admissible match exists. All
entropies use 0*log(0) = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


@dataclass
class Cover:
    """Named, possibly overlapping clusters of element ids. Empty clusters
    are dropped at construction."""

    clusters: list[tuple[str, frozenset]] = field(default_factory=list)

    @classmethod
    def from_mapping(cls, mapping) -> "Cover":
        clusters = [(str(name), frozenset(elems)) for name, elems in
                    (mapping.items() if isinstance(mapping, dict) else mapping)]
        return cls([(n, s) for n, s in clusters if s])

    def sets(self) -> list[frozenset]:
        return [s for _, s in self.clusters]

    def __len__(self) -> int:
        return len(self.clusters)


def read_cover(path) -> Cover:
    """Read a cover from cluster-snapshot/ground-truth JSONL rows."""
    clusters = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            name = row.get("cluster_id", row.get("cluster_uid"))
            clusters.append((str(name), frozenset(row["tweet_ids"])))
    return Cover([(n, s) for n, s in clusters if s])


def write_cover(path, cover) -> None:
    if isinstance(cover, dict):
        cover = Cover.from_mapping(cover)
    with open(path, "w", encoding="utf-8") as fh:
        for name, elems in cover.clusters:
            fh.write(json.dumps(
                {"cluster_id": name, "tweet_ids": sorted(elems)},
                sort_keys=True, separators=(",", ":")) + "\n")


def _h(p: float) -> float:
    return -p * math.log(p) if p > 0.0 else 0.0


def _entropy(size: int, n: int) -> float:
    p = size / n
    return _h(p) + _h(1.0 - p)


def _conditional_terms(xs: list[frozenset], ys: list[frozenset], n: int) -> float:
    """Mean over X of H(X | best admissible Y) / H(X); 0 when H(X) = 0."""
    hy = [_entropy(len(y), n) for y in ys]
    total = 0.0
    for x in xs:
        hx = _entropy(len(x), n)
        if hx == 0.0:
            continue
        best = hx
        lx = len(x)
        for y, hy_j in zip(ys, hy):
            c11 = len(x & y)
            c10 = lx - c11
            c01 = len(y) - c11
            c00 = n - c11 - c10 - c01
            h11 = _h(c11 / n)
            h10 = _h(c10 / n)
            h01 = _h(c01 / n)
            h00 = _h(c00 / n)
            if h11 + h00 < h01 + h10:
                continue  # inadmissible: Y explains the complement of X
            cond = h11 + h10 + h01 + h00 - hy_j
            if cond < best:
                best = cond
        total += best / hx
    return total / len(xs)


def lfk_nmi(a: Cover, b: Cover) -> float:
    """Overlap-aware NMI between two covers; 1 for identical covers, ~0 for
    covers carrying no information about each other. Symmetric."""
    xs = a.sets()
    ys = b.sets()
    if not xs or not ys:
        raise ValueError("both covers must contain at least one non-empty cluster")
    universe = set().union(*xs).union(*ys)
    n = len(universe)
    score = 1.0 - (_conditional_terms(xs, ys, n) + _conditional_terms(ys, xs, n)) / 2.0
    return min(1.0, max(0.0, score))


def compare_exact(a: Cover, b: Cover) -> tuple[bool, list[str]]:
    """True iff the covers are identical as sets of sets; the diff report
    pairs unmatched clusters with their closest counterpart by Jaccard."""
    sa = set(a.sets())
    sb = set(b.sets())
    if sa == sb:
        return True, []
    report = []
    for side, only, other in (("a", sa - sb, sb), ("b", sb - sa, sa)):
        for s in sorted(only, key=sorted):
            best = None
            best_j = -1.0
            for t in other:
                j = len(s & t) / len(s | t)
                if j > best_j:
                    best_j = j
                    best = t
            if best is None:
                report.append(f"only in {side}: {sorted(s)}")
            else:
                report.append(
                    f"only in {side}: cluster of {len(s)} elements; closest match "
                    f"jaccard={best_j:.3f}; missing={sorted(s - best)[:10]} "
                    f"extra={sorted(best - s)[:10]}")
    return False, report


@dataclass
class MetricsReport:
    """Per-batch engine metrics plus aggregates recomputable from the rows."""

    rows: list[dict]
    total_time_s: float = 0.0
    speedup_vs_1worker: float | None = None

    @property
    def comp_over_sync_ratio(self) -> float | None:
        comp = sum(r["compute_time_s"] for r in self.rows
                   if r.get("sync_time_s") is not None)
        sync = sum(r["sync_time_s"] for r in self.rows
                   if r.get("sync_time_s") is not None)
        return comp / sync if sync > 0 else None

    @property
    def avg_message_bytes(self) -> float | None:
        sizes = [r["message_bytes"] for r in self.rows
                 if r.get("message_bytes") is not None]
        return sum(sizes) / len(sizes) if sizes else None

    @property
    def avg_sync_time_s(self) -> float | None:
        times = [r["sync_time_s"] for r in self.rows
                 if r.get("sync_time_s") is not None]
        return sum(times) / len(times) if times else None

    def to_obj(self) -> dict:
        obj = {
            "per_batch": self.rows,
            "aggregates": {
                "comp_over_sync_ratio": self.comp_over_sync_ratio,
                "avg_message_bytes": self.avg_message_bytes,
                "avg_sync_time_s": self.avg_sync_time_s,
                "batches": len(self.rows),
                "total_time_s": self.total_time_s,
            },
        }
        if self.speedup_vs_1worker is not None:
            obj["aggregates"]["speedup_vs_1worker"] = self.speedup_vs_1worker
        return obj


def bench_report(runs: list[tuple[dict, MetricsReport]]) -> tuple[str, list[dict]]:
    """Render a worker-count sweep as an aligned table plus JSON rows.

    Speedup is computed against the 1-worker run of the same strategy when
    one is present.
    """
    if not runs:
        raise ValueError("bench_report needs at least one run")
    base: dict[str, float] = {}
    for config, metrics in runs:
        if config.get("workers") == 1 and metrics.total_time_s > 0:
            base[config.get("strategy", "")] = metrics.total_time_s
    rows = []
    for config, metrics in runs:
        speedup = None
        ref = base.get(config.get("strategy", ""))
        if ref is not None and metrics.total_time_s > 0:
            speedup = ref / metrics.total_time_s
        rows.append({
            "workers": config.get("workers"),
            "strategy": config.get("strategy"),
            "batch_size": config.get("batch_size"),
            "comp_over_sync_ratio": metrics.comp_over_sync_ratio,
            "avg_sync_time_s": metrics.avg_sync_time_s,
            "avg_message_bytes": metrics.avg_message_bytes,
            "total_time_s": metrics.total_time_s,
            "speedup_vs_1worker": speedup,
        })

    def fmt(v, spec) -> str:
        return "-" if v is None else format(v, spec)

    header = (f"{'workers':>7}  {'strategy':<14}  {'batch':>6}  "
              f"{'comp/sync':>10}  {'sync/batch(s)':>13}  "
              f"{'avg msg bytes':>13}  {'total(s)':>9}  {'speedup':>7}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['workers']:>7}  {r['strategy']:<14}  {fmt(r['batch_size'], 'd'):>6}  "
            f"{fmt(r['comp_over_sync_ratio'], '.2f'):>10}  "
            f"{fmt(r['avg_sync_time_s'], '.4f'):>13}  "
            f"{fmt(r['avg_message_bytes'], '.0f'):>13}  "
            f"{fmt(r['total_time_s'], '.2f'):>9}  "
            f"{fmt(r['speedup_vs_1worker'], '.2f'):>7}")
    return "\n".join(lines), rows
