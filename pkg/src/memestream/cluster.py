"""Clusters, centroids, running similarity statistics, the sliding window,
and the sequential stream-clustering loop.

Centroids are kept as exact sums of member vectors plus a member count; the
average is never materialized because cosine similarity is scale-invariant.
All vector weights are integers in this pipeline, so incremental sums and
sum-of-squares bookkeeping are exact and runs are bit-reproducible.
"""

from __future__ import annotations

import logging
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .protomeme import Marker, Protomeme, RetweetIndex, generate_protomemes
from .sparse import NEG_EPS, ZERO_EPS, ConsistencyError

log = logging.getLogger("memestream")

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Params:
    k: int
    step_len: int
    window_steps: int
    nsigma: float
    seed: int = 0

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.step_len < 1:
            raise ValueError("step_len must be positive")
        if self.window_steps < 1:
            raise ValueError("window_steps must be >= 1")
        if self.nsigma < 0:
            raise ValueError("nsigma must be >= 0")


@dataclass
class OnlineStats:
    """Welford-updated mean and population standard deviation."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        if not math.isfinite(x):
            raise ValueError(f"non-finite similarity {x!r}")
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def sigma(self) -> float:
        if self.count <= 1:
            return 0.0
        return math.sqrt(self.m2 / self.count)

    def frozen(self) -> "FrozenStats":
        return FrozenStats(self.mean, self.sigma, self.count)


class FrozenStats(NamedTuple):
    """Point-in-time mean/sigma snapshot used by paused-state consumers."""

    mean: float
    sigma: float
    count: int


def outlier_test(sim: float, mean: float, sigma: float, nsigma: float) -> bool:
    """True when sim is an outlier: at or below mean - nsigma * sigma."""
    return sim <= mean - nsigma * sigma


class Centroid:
    """Exact per-space sums of member vectors plus cached sums of squares."""

    SPACES = ("tid", "uid", "content", "diffusion")
    __slots__ = ("tid", "uid", "content", "diffusion",
                 "tid_sq", "uid_sq", "content_sq", "diffusion_sq", "count")

    def __init__(self):
        self.tid: dict[str, float] = {}
        self.uid: dict[str, float] = {}
        self.content: dict[str, float] = {}
        self.diffusion: dict[str, float] = {}
        self.tid_sq = 0
        self.uid_sq = 0
        self.content_sq = 0
        self.diffusion_sq = 0
        self.count = 0

    def _vectors_of(self, p: Protomeme):
        return ((("tid", "tid_sq"), p.v_tid), (("uid", "uid_sq"), p.v_uid),
                (("content", "content_sq"), p.v_content),
                (("diffusion", "diffusion_sq"), p.v_diffusion))

    def add(self, p: Protomeme) -> None:
        self.count += 1
        for (dname, sqname), vec in self._vectors_of(p):
            d = getattr(self, dname)
            sq = getattr(self, sqname)
            for k, w in vec.entries.items():
                nd = d.get(k, 0) + w
                d[k] = nd
                sq += w * (2 * nd - w)
            setattr(self, sqname, sq)

    def remove(self, p: Protomeme) -> None:
        if self.count < 1:
            raise ConsistencyError("removing from an empty centroid")
        self.count -= 1
        for (dname, sqname), vec in self._vectors_of(p):
            d = getattr(self, dname)
            sq = getattr(self, sqname)
            for k, w in vec.entries.items():
                old = d.get(k)
                if old is None:
                    raise ConsistencyError(f"removing absent dimension {k!r}")
                nd = old - w
                sq -= w * (2 * old - w)
                if nd < NEG_EPS:
                    raise ConsistencyError(f"dimension {k!r} driven to {nd}")
                if abs(nd) <= ZERO_EPS:
                    del d[k]
                else:
                    d[k] = nd
            setattr(self, sqname, sq)

    def spaces(self):
        return ((self.tid, self.tid_sq), (self.uid, self.uid_sq),
                (self.content, self.content_sq), (self.diffusion, self.diffusion_sq))


class Cluster:
    """A slot-resident cluster: member protomemes plus their centroid sums."""

    __slots__ = ("uid", "members", "centroid", "last_update_ts", "markers")

    def __init__(self, uid: int):
        self.uid = uid
        self.members: deque[Protomeme] = deque()
        self.centroid = Centroid()
        self.last_update_ts: int | None = None
        self.markers: Counter = Counter()

    @property
    def count(self) -> int:
        return self.centroid.count

    def add(self, p: Protomeme) -> None:
        self.members.append(p)
        self.centroid.add(p)
        self.markers[p.marker] += 1
        if self.last_update_ts is None or p.ending_ts > self.last_update_ts:
            self.last_update_ts = p.ending_ts

    def remove_oldest(self, expected: Protomeme) -> None:
        # Members are appended in stream order, so expiry always removes a
        # prefix; anything else is an accounting bug.
        p = self.members.popleft()
        if p is not expected and p != expected:
            raise ConsistencyError("window expiry out of order with cluster members")
        self.centroid.remove(p)
        self.markers[p.marker] -= 1
        if self.markers[p.marker] <= 0:
            del self.markers[p.marker]

    def refresh_last_update(self) -> None:
        self.last_update_ts = max(
            (m.ending_ts for m in self.members), default=None)

    def update_key(self) -> float:
        return NEG_INF if self.last_update_ts is None else float(self.last_update_ts)


def similarity(p: Protomeme, cluster: Cluster) -> float:
    """Max over the four vector spaces of cosine(p vector, centroid vector).

    Computed against the raw centroid sums; dividing by the member count
    would not change the cosine. Empty clusters score 0.
    """
    if cluster.count == 0:
        return 0.0
    best = 0.0
    cen = cluster.centroid
    for vec, (sums, sq) in zip(
            (p.v_tid, p.v_uid, p.v_content, p.v_diffusion), cen.spaces()):
        if not sums:
            continue
        pn = vec.norm()
        if pn == 0.0:
            continue
        acc = 0
        get = sums.get
        for k, w in vec.entries.items():
            v = get(k)
            if v is not None:
                acc += w * v
        if acc:
            c = acc / (pn * math.sqrt(sq))
            if c > best:
                best = c
    return 1.0 if best > 1.0 else best


class Decision(NamedTuple):
    """Pure assignment decision; `sim` is the value fed to the running stats."""

    kind: str  # "marker" | "nearest" | "outlier"
    uid: int | None
    sim: float


@dataclass
class ClusterState:
    """All mutable state of one clustering run (or one worker's copy)."""

    params: Params
    clusters: list[Cluster] = field(default_factory=list)
    by_uid: dict[int, int] = field(default_factory=dict)
    marker_map: dict[Marker, int] = field(default_factory=dict)
    marker_live: Counter = field(default_factory=Counter)
    window: deque = field(default_factory=deque)  # (step_index, [(protomeme, uid)])
    current_step: int | None = None
    stats: OnlineStats = field(default_factory=OnlineStats)
    next_uid: int = 0
    # opt-in: uid -> all tweet ids ever assigned to it (uids are never reused)
    cover_accum: dict | None = None

    @classmethod
    def initial(cls, params: Params) -> "ClusterState":
        params.validate()
        state = cls(params=params)
        state.clusters = [Cluster(uid) for uid in range(params.k)]
        state.by_uid = {uid: uid for uid in range(params.k)}
        state.next_uid = params.k
        return state

    def cluster_of(self, uid: int) -> Cluster:
        return self.clusters[self.by_uid[uid]]

    def live_window_count(self) -> int:
        return sum(len(entries) for _, entries in self.window)

    def note_protomeme(self, p: Protomeme, uid: int) -> None:
        if not self.window or self.window[-1][0] != p.step_index:
            if self.window and p.step_index < self.window[-1][0]:
                raise ConsistencyError("window steps must be nondecreasing")
            self.window.append((p.step_index, []))
        self.window[-1][1].append((p, uid))
        self.marker_live[p.marker] += 1
        self.marker_map[p.marker] = uid
        if self.cover_accum is not None:
            self.cover_accum.setdefault(uid, set()).update(
                k[2:] for k in p.v_tid.entries)

    def add_to_cluster(self, uid: int, p: Protomeme) -> None:
        self.cluster_of(uid).add(p)
        self.note_protomeme(p, uid)

    def expire_to(self, new_step: int) -> None:
        """Advance the window (possibly by several steps), dropping protomemes
        older than the last `window_steps` steps from the window, their
        clusters, and the marker bookkeeping."""
        if self.current_step is not None and new_step < self.current_step:
            raise ValueError("window can only advance forward")
        self.current_step = new_step
        cutoff = new_step - self.params.window_steps
        touched: set[int] = set()
        while self.window and self.window[0][0] <= cutoff:
            _, entries = self.window.popleft()
            for p, uid in entries:
                marker = p.marker
                self.marker_live[marker] -= 1
                if self.marker_live[marker] <= 0:
                    del self.marker_live[marker]
                    self.marker_map.pop(marker, None)
                slot = self.by_uid.get(uid)
                if slot is not None:
                    self.clusters[slot].remove_oldest(p)
                    touched.add(slot)
        for slot in touched:
            self.clusters[slot].refresh_last_update()


def assign(state: ClusterState, p: Protomeme,
           mean: float, sigma: float, nsigma: float) -> Decision:
    """Decide where a protomeme goes. Does not mutate state.

    A marker already mapped to a cluster short-circuits the similarity scan
    (the similarity to that cluster is still computed, as the stats feed).
    Otherwise the nearest non-empty cluster wins (ties: lowest slot index),
    and the outlier test on that best similarity may veto the assignment.
    """
    uid = state.marker_map.get(p.marker)
    if uid is not None:
        return Decision("marker", uid, similarity(p, state.cluster_of(uid)))
    best_sim = 0.0
    best_uid = None
    for cluster in state.clusters:
        if cluster.count == 0:
            continue
        s = similarity(p, cluster)
        if best_uid is None or s > best_sim:
            best_sim = s
            best_uid = cluster.uid
    if best_uid is None:
        return Decision("outlier", None, 0.0)
    if outlier_test(best_sim, mean, sigma, nsigma):
        return Decision("outlier", None, best_sim)
    return Decision("nearest", best_uid, best_sim)


def victim_key(cluster: Cluster, slot: int):
    """Replacement preference: empty slots first (lowest index), then least
    recently updated (ties: lowest index)."""
    return (cluster.count != 0, cluster.update_key(), slot)


def replace_cluster(state: ClusterState, newc: Cluster) -> int:
    """Install a new cluster, evicting an empty slot or the LRU one.

    Assigns the new cluster's uid from the generation counter and purges the
    replaced cluster's marker-map entries. Returns the replaced slot index.
    """
    newc.uid = state.next_uid
    state.next_uid += 1
    slot = min(range(len(state.clusters)),
               key=lambda i: victim_key(state.clusters[i], i))
    victim = state.clusters[slot]
    for marker in victim.markers:
        if state.marker_map.get(marker) == victim.uid:
            del state.marker_map[marker]
    del state.by_uid[victim.uid]
    state.clusters[slot] = newc
    state.by_uid[newc.uid] = slot
    return slot


def process_protomeme(state: ClusterState, p: Protomeme, nsigma: float) -> Decision:
    """One step of the sequential loop: decide, apply, feed the stats."""
    stats = state.stats
    d = assign(state, p, stats.mean, stats.sigma, nsigma)
    if d.kind == "outlier":
        newc = Cluster(-1)
        newc.add(p)
        replace_cluster(state, newc)
        state.note_protomeme(p, newc.uid)
    else:
        state.add_to_cluster(d.uid, p)
    stats.add(d.sim)
    return d


def seed_initial_clusters(state: ClusterState, npl: list[Protomeme],
                          rng: random.Random) -> list[Protomeme]:
    """Cold start: seed up to K singleton clusters with protomemes drawn
    without replacement from the sorted new-protomeme list. Seeds join the
    window but do not feed the stats. Returns the remaining protomemes."""
    k = min(state.params.k, len(npl))
    picks = rng.sample(range(len(npl)), k)
    for i in picks:
        p = npl[i]
        newc = Cluster(-1)
        newc.add(p)
        replace_cluster(state, newc)
        state.note_protomeme(p, newc.uid)
    pickset = set(picks)
    return [p for i, p in enumerate(npl) if i not in pickset]


def run_sequential(batches: Iterable, params: Params, *,
                   initial_state: ClusterState | None = None,
                   retweet_index: RetweetIndex | None = None,
                   counters: dict | None = None,
                   track_cover: bool = False,
                   on_step=None):
    """Run the sequential sliding-window clustering loop over time steps.

    Per step: update the retweet index, generate protomemes, (re)seed when
    every cluster is empty, expire the window, then assign each protomeme
    (marker hit, else nearest-or-outlier) while maintaining the running
    mean/sigma. Returns (final state, per-step snapshots); `on_step`, when
    given, receives (state, batch) after each step and snapshot collection
    is left to it.
    """
    params.validate()
    state = initial_state if initial_state is not None else ClusterState.initial(params)
    if track_cover and state.cover_accum is None:
        state.cover_accum = {}
    rng = random.Random(params.seed)
    idx = retweet_index if retweet_index is not None else RetweetIndex(params.window_steps)
    counters = counters if counters is not None else {}
    snapshots = []
    total_protomemes = 0

    from .serialize import snapshot_rows  # local import to avoid a cycle

    for batch in batches:
        idx.update(batch)
        npl = generate_protomemes(batch, idx, counters)
        total_protomemes += len(npl)
        if npl and all(c.count == 0 for c in state.clusters):
            npl = seed_initial_clusters(state, npl, rng)
        state.expire_to(batch.step_index)
        for p in npl:
            d = process_protomeme(state, p, params.nsigma)
            if d.kind == "outlier":
                counters["outliers"] = counters.get("outliers", 0) + 1
        counters["steps"] = counters.get("steps", 0) + 1
        counters["protomemes"] = total_protomemes
        if on_step is not None:
            on_step(state, batch)
        else:
            snapshots.append((batch.step_index, snapshot_rows(state)))

    if total_protomemes == 0:
        log.warning("stream produced no protomemes; returning initial state")
    return state, snapshots
