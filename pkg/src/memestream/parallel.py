"""Parallel engine: generator / workers / coordinator over a message bus.

Roles are plain state machines communicating only through messages, so the
same logic runs under the single-threaded deterministic scheduler and under
one-process-per-role concurrent execution. Three design points make results
a pure function of (stream, config) in both modes:

- the generator numbers protomemes globally and plans batch boundaries
  (every `batch_size` protomemes, truncated at time-step starts so a batch
  never spans steps); workers refuse to process a protomeme of batch j+1
  before applying the batch-j sync, which is exactly the barrier-safety
  invariant;
- the coordinator processes tuples in generator-sequence order, buffering
  out-of-order arrivals, so its statistics and outlier grouping do not
  depend on worker timing;
- every sync message carries the time step the stream has reached; workers
  and the coordinator re-expire to it after applying the message, which
  keeps all copies of the window identical across workers and strategies.

The sync protocol itself is the three-step barrier: the coordinator
publishes SYNCINIT on the sync topic once the planned batch is fully
received, each worker pauses and answers SYNCREQ, and the coordinator then
broadcasts CDELTA (added protomemes per cluster) or CENTROIDS (whole
centroid vectors), both with the latest mean/sigma.
"""

from __future__ import annotations

import logging
import multiprocessing
import pickle
import queue as queue_mod
import sys
import time
import traceback
from collections import deque
from dataclasses import dataclass

from .cluster import (Cluster, ClusterState, Centroid, FrozenStats, OnlineStats,
                      Params, assign, similarity, outlier_test, victim_key,
                      NEG_INF)
from .messages import (AppliedAck, BatchPlan, CDeltaEntry, CentroidEntry,
                       PMEnvelope, Shutdown, SyncMessage, WorkTuple,
                       serialize_sync)
from .protomeme import Marker, Protomeme, RetweetIndex, generate_protomemes
from .serialize import canonical_bytes, digest, state_to_obj
from .sparse import ConsistencyError

log = logging.getLogger("memestream")

CLUSTER_DELTA = "cluster_delta"
FULL_CENTROIDS = "full_centroids"
STRATEGIES = (CLUSTER_DELTA, FULL_CENTROIDS)


class EngineError(RuntimeError):
    pass


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def route(marker: Marker, workers: int) -> int:
    """Stable marker-to-worker routing: FNV-1a 64 over "kind:value" mod W."""
    return fnv1a64(f"{marker.kind}:{marker.value}".encode("utf-8")) % workers


@dataclass
class Bootstrap:
    """Initial engine state: a cluster state (with its running stats) plus
    the retweet index accumulated while producing it."""

    state: ClusterState
    retweet_index: RetweetIndex | None = None


@dataclass
class EngineConfig:
    params: Params
    workers: int = 1
    batch_size: int = 1
    strategy: str = CLUSTER_DELTA
    deterministic: bool = True
    bootstrap: Bootstrap | None = None
    verify_sync: bool = False      # per-sync worker state hashes (slow: O(window)/sync)
    collect_digests: bool = False  # per-batch decision digests (cheap: O(adds)/sync)
    measure_bytes: bool = True     # serialize broadcast messages to record bytes
    digest_every: int = 0          # full centroid digest every n batches (0 = off)
    track_cover: bool = False      # accumulate uid -> tweet ids at the coordinator
    queue_size: int = 8192

    def validate(self) -> None:
        self.params.validate()
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.bootstrap is None:
            raise ValueError("engine requires a bootstrap state")
        if self.bootstrap.state.params.k != self.params.k:
            raise ValueError("bootstrap cluster count does not match params.k")


def _copy_state(state: ClusterState) -> ClusterState:
    return pickle.loads(pickle.dumps(state, protocol=pickle.HIGHEST_PROTOCOL))


# --------------------------------------------------------------------------
# Generator

class GeneratorRole:
    """Reads time-step batches, generates routed protomemes, plans batches.

    Batch boundaries fall every `batch_size` protomemes and additionally at
    every time-step start, so a batch never spans steps and the expiry point
    announced with each sync is exact. Batch 0 is a synthetic empty batch
    whose announce step aligns every role to the stream's first populated
    step before any assignment happens.
    """

    def __init__(self, cfg: EngineConfig, emit_env, emit_plan):
        self.cfg = cfg
        self.emit_env = emit_env
        self.emit_plan = emit_plan
        idx = cfg.bootstrap.retweet_index
        # Copy: the engine must not mutate a bootstrap shared across runs.
        self.idx = (pickle.loads(pickle.dumps(idx)) if idx is not None
                    else RetweetIndex(cfg.params.window_steps))
        self.counters: dict = {}
        self.seq = 0
        self.batch_seq = 0
        self.in_batch = 0
        self.open_step: int | None = None
        self.last_step: int | None = cfg.bootstrap.state.current_step
        self.primed = False
        self.finished = False

    def _close_batch(self, announce_step: int, final: bool = False) -> None:
        self.emit_plan(BatchPlan(self.batch_seq, self.in_batch, announce_step, final))
        self.batch_seq += 1
        self.in_batch = 0
        self.open_step = None

    def run_batch(self, batch) -> None:
        self.idx.update(batch)
        npl = generate_protomemes(batch, self.idx, self.counters)
        self.last_step = batch.step_index
        w = self.cfg.workers
        b = self.cfg.batch_size
        for p in npl:
            if not self.primed:
                # Synthetic empty batch 0: aligns everyone to the first
                # populated step before any protomeme is assigned.
                self._close_batch(p.step_index)
                self.primed = True
            elif self.in_batch >= b or (self.in_batch > 0 and p.step_index != self.open_step):
                self._close_batch(p.step_index)
            if self.in_batch == 0:
                self.open_step = p.step_index
            self.emit_env(route(p.marker, w), PMEnvelope(self.seq, self.batch_seq, p))
            self.seq += 1
            self.in_batch += 1

    def finish(self) -> None:
        if self.finished:
            return
        self.finished = True
        announce = self.last_step if self.last_step is not None else 0
        self._close_batch(announce, final=True)


# --------------------------------------------------------------------------
# Worker-side state for the full-centroids strategy

class CentroidCluster:
    """Centroid-only view of a cluster (no member list, never expired locally)."""

    __slots__ = ("uid", "centroid", "last_update_ts")

    def __init__(self, uid: int, centroid: Centroid, last_update_ts: int | None):
        self.uid = uid
        self.centroid = centroid
        self.last_update_ts = last_update_ts

    @property
    def count(self) -> int:
        return self.centroid.count

    def update_key(self) -> float:
        return NEG_INF if self.last_update_ts is None else float(self.last_update_ts)


def _centroid_from_sums(sums: dict, count: int) -> Centroid:
    cen = Centroid()
    cen.count = count
    for space in Centroid.SPACES:
        d = dict(sums.get(space, {}))
        setattr(cen, space, d)
        setattr(cen, space + "_sq", sum(w * w for w in d.values()))
    return cen


class CentroidWorkerState:
    """Duck-types the parts of ClusterState that `assign` needs."""

    def __init__(self):
        self.clusters: list[CentroidCluster] = []
        self.by_uid: dict[int, int] = {}
        self.marker_map: dict[Marker, int] = {}
        self.current_step: int | None = None

    @classmethod
    def from_full(cls, state: ClusterState) -> "CentroidWorkerState":
        ws = cls()
        for c in state.clusters:
            cen = _centroid_from_sums(
                {s: dict(getattr(c.centroid, s)) for s in Centroid.SPACES},
                c.centroid.count)
            ws.clusters.append(CentroidCluster(c.uid, cen, c.last_update_ts))
        ws.by_uid = {c.uid: i for i, c in enumerate(ws.clusters)}
        ws.marker_map = dict(state.marker_map)
        ws.current_step = state.current_step
        return ws

    def cluster_of(self, uid: int) -> CentroidCluster:
        return self.clusters[self.by_uid[uid]]


# --------------------------------------------------------------------------
# Sync-message application (shared by workers and the coordinator's own copy)

def apply_cdelta(state: ClusterState, m: SyncMessage) -> None:
    """Apply a CDELTA: restructure slots, add protomemes, re-expire.

    Entries arrive in slot order and have length K. Clusters absent from the
    message are dropped (their marker-map entries purged, their window
    protomemes orphaned); is_new entries are built from their member list.
    """
    surviving = {e.uid for e in m.entries if not e.is_new}
    for uid, slot in state.by_uid.items():
        if uid not in surviving:
            victim = state.clusters[slot]
            for marker in victim.markers:
                if state.marker_map.get(marker) == uid:
                    del state.marker_map[marker]
    new_clusters: list[Cluster] = []
    for e in m.entries:
        if e.is_new:
            if e.uid in state.by_uid:
                raise ConsistencyError(f"new cluster uid {e.uid} already live")
            new_clusters.append(Cluster(e.uid))
        else:
            slot = state.by_uid.get(e.uid)
            if slot is None:
                raise ConsistencyError(f"sync references unknown cluster uid {e.uid}")
            new_clusters.append(state.clusters[slot])
    state.clusters = new_clusters
    state.by_uid = {c.uid: i for i, c in enumerate(new_clusters)}
    state.next_uid = m.next_uid
    for e in m.entries:
        for p in e.added:
            state.add_to_cluster(e.uid, p)
    target = m.current_step
    if state.current_step is not None and target is not None:
        target = max(target, state.current_step)
    state.expire_to(target)


def apply_centroids(ws: CentroidWorkerState, m: SyncMessage) -> None:
    """Apply a CENTROIDS message: replace every centroid wholesale."""
    clusters = []
    marker_map: dict[Marker, int] = {}
    for e in m.entries:
        clusters.append(CentroidCluster(
            e.uid, _centroid_from_sums(e.sums, e.count), e.last_update_ts))
        for marker in e.markers:
            marker_map[marker] = e.uid
    ws.clusters = clusters
    ws.by_uid = {c.uid: i for i, c in enumerate(clusters)}
    ws.marker_map = marker_map
    ws.current_step = m.current_step


def delta_state_hash(state: ClusterState, stats: FrozenStats) -> str:
    obj = state_to_obj(state)
    obj["stats"] = [stats.mean, stats.sigma, stats.count]
    return digest(canonical_bytes(obj))


def centroid_state_hash(ws: CentroidWorkerState, stats: FrozenStats) -> str:
    obj = {
        "slots": [
            {"uid": c.uid, "count": c.centroid.count,
             "last_update": c.last_update_ts,
             "sums": {s: getattr(c.centroid, s) for s in Centroid.SPACES}}
            for c in ws.clusters
        ],
        "marker_map": [[m.kind, m.value, uid]
                       for m, uid in sorted(ws.marker_map.items())],
        "current_step": ws.current_step,
        "stats": [stats.mean, stats.sigma, stats.count],
    }
    return digest(canonical_bytes(obj))


# --------------------------------------------------------------------------
# Worker

class WorkerRole:
    """One clustering worker: assigns routed protomemes against its frozen
    copy of the global state and emits PMADD/OUTLIER tuples. Never mutates
    clusters between syncs."""

    def __init__(self, worker_id: int, cfg: EngineConfig, bootstrap_state: ClusterState,
                 emit):
        self.worker_id = worker_id
        self.cfg = cfg
        self.emit = emit
        self.batch_seq = 0
        self.frozen = bootstrap_state.stats.frozen()
        if cfg.strategy == CLUSTER_DELTA:
            self.state = bootstrap_state
            self.state.stats = OnlineStats()  # workers hold stats only as frozen values
            self.state.cover_accum = None     # cover tracking is the coordinator's job
        else:
            self.state = CentroidWorkerState.from_full(bootstrap_state)
        self.stash: deque[PMEnvelope] = deque()
        self.comp_time = 0.0
        self.done = False

    def handle(self, msg) -> None:
        if isinstance(msg, PMEnvelope):
            if msg.batch_seq == self.batch_seq:
                self._process(msg)
            elif msg.batch_seq > self.batch_seq:
                self.stash.append(msg)
            else:
                raise ConsistencyError("envelope for an already-synced batch")
        elif isinstance(msg, SyncMessage):
            if msg.kind == "SYNCINIT":
                self._on_sync_init(msg)
            else:
                self._on_sync_state(msg)
        elif isinstance(msg, Shutdown):
            self.done = True
        else:
            raise EngineError(f"worker got unexpected message {type(msg).__name__}")

    def _process(self, env: PMEnvelope) -> None:
        t0 = time.perf_counter()
        p = env.protomeme
        if route(p.marker, self.cfg.workers) != self.worker_id:
            raise ConsistencyError(
                f"protomeme {p.marker} routed to worker {self.worker_id}")
        state = self.state
        if (self.cfg.strategy == CLUSTER_DELTA and state.current_step is not None
                and p.step_index > state.current_step):
            state.expire_to(p.step_index)
        d = assign(state, p, self.frozen.mean, self.frozen.sigma,
                   self.cfg.params.nsigma)
        if d.kind == "outlier":
            out = WorkTuple(kind="OUTLIER", worker_id=self.worker_id,
                            batch_seq=env.batch_seq, seq=env.seq,
                            protomeme=p, sim=d.sim)
        else:
            out = WorkTuple(kind="PMADD", worker_id=self.worker_id,
                            batch_seq=env.batch_seq, seq=env.seq,
                            protomeme=p, target_uid=d.uid, sim=d.sim)
        self.comp_time += time.perf_counter() - t0
        self.emit(out)

    def _on_sync_init(self, m: SyncMessage) -> None:
        if m.batch_seq != self.batch_seq:
            raise ConsistencyError(
                f"SYNCINIT for batch {m.batch_seq} at worker batch {self.batch_seq}")
        self.emit(WorkTuple(kind="SYNCREQ", worker_id=self.worker_id,
                            batch_seq=self.batch_seq, comp_time=self.comp_time))
        self.comp_time = 0.0

    def _on_sync_state(self, m: SyncMessage) -> None:
        if m.batch_seq != self.batch_seq:
            raise ConsistencyError(
                f"sync state for batch {m.batch_seq} at worker batch {self.batch_seq}")
        t0 = time.perf_counter()
        if m.kind == "CDELTA":
            apply_cdelta(self.state, m)
        else:
            apply_centroids(self.state, m)
        self.frozen = m.stats
        self.batch_seq += 1
        state_hash = None
        if self.cfg.verify_sync:
            if self.cfg.strategy == CLUSTER_DELTA:
                state_hash = delta_state_hash(self.state, self.frozen)
            else:
                state_hash = centroid_state_hash(self.state, self.frozen)
        self.emit(AppliedAck(self.worker_id, m.batch_seq, state_hash,
                             time.perf_counter() - t0))
        while self.stash and self.stash[0].batch_seq == self.batch_seq:
            self._process(self.stash.popleft())


# --------------------------------------------------------------------------
# Coordinator

class _Delta:
    __slots__ = ("added", "last_update_ts")

    def __init__(self):
        self.added: list[Protomeme] = []
        self.last_update_ts: int | None = None


class CoordinatorRole:
    """Collects worker tuples, maintains the authoritative cluster state and
    running stats, and drives the SYNCINIT / SYNCREQ / CDELTA(-or-CENTROIDS)
    barrier once the planned batch is fully received."""

    def __init__(self, cfg: EngineConfig, state: ClusterState, publish):
        self.cfg = cfg
        self.state = state
        if cfg.track_cover and state.cover_accum is None:
            state.cover_accum = {}
        self.publish = publish
        self.batch_seq = 0
        self.next_seq = 0
        self.pending: dict[int, WorkTuple] = {}
        self.plans: dict[int, BatchPlan] = {}
        self.phase = "tuples"  # "tuples" -> "syncreq" -> next batch
        self.deltas: dict[int, _Delta] = {}
        self.outliers: list[Cluster] = []
        self.processed = 0
        self.syncreqs: dict[int, float] = {}
        self.acks: dict[int, dict[int, AppliedAck]] = {}
        self.rows: list[dict] = []
        self.final_batch: int | None = None
        self.done = False
        self.counters: dict = {"outlier_tuples": 0, "pmadd_tuples": 0,
                               "outlier_clusters_created": 0}

    # -- message entry points -------------------------------------------

    def handle(self, msg) -> None:
        if isinstance(msg, WorkTuple):
            if msg.kind == "SYNCREQ":
                self._on_syncreq(msg)
            else:
                self.pending[msg.seq] = msg
                self._drain()
        elif isinstance(msg, BatchPlan):
            self.plans[msg.batch_seq] = msg
            if msg.final:
                self.final_batch = msg.batch_seq
            self._try_fire()
        elif isinstance(msg, AppliedAck):
            self._on_ack(msg)
        else:
            raise EngineError(f"coordinator got unexpected message {type(msg).__name__}")

    def _drain(self) -> None:
        while (self.phase == "tuples" and self.next_seq in self.pending
               and self.pending[self.next_seq].batch_seq == self.batch_seq):
            t = self.pending.pop(self.next_seq)
            self.next_seq += 1
            self._process_tuple(t)
            self.processed += 1
        self._try_fire()

    def _process_tuple(self, t: WorkTuple) -> None:
        stats = self.state.stats
        if t.kind == "PMADD":
            self.counters["pmadd_tuples"] += 1
            if t.target_uid not in self.state.by_uid:
                raise ConsistencyError(f"PMADD for unknown cluster uid {t.target_uid}")
            delta = self.deltas.get(t.target_uid)
            if delta is None:
                delta = self.deltas[t.target_uid] = _Delta()
            delta.added.append(t.protomeme)
            ts = t.protomeme.ending_ts
            if delta.last_update_ts is None or ts > delta.last_update_ts:
                delta.last_update_ts = ts
        elif t.kind == "OUTLIER":
            self.counters["outlier_tuples"] += 1
            p = t.protomeme
            best = None
            best_sim = 0.0
            for oc in self.outliers:
                s = similarity(p, oc)
                if best is None or s > best_sim:
                    best = oc
                    best_sim = s
            if best is not None and not outlier_test(
                    best_sim, stats.mean, stats.sigma, self.cfg.params.nsigma):
                best.add(p)
            else:
                oc = Cluster(-1)
                oc.add(p)
                self.outliers.append(oc)
                self.counters["outlier_clusters_created"] += 1
        else:
            raise EngineError(f"unexpected tuple kind {t.kind}")
        stats.add(t.sim)

    def _try_fire(self) -> None:
        if self.phase != "tuples":
            return
        plan = self.plans.get(self.batch_seq)
        if plan is not None and self.processed >= plan.size:
            self.phase = "syncreq"
            self._t0 = time.perf_counter()
            self.publish(SyncMessage(kind="SYNCINIT", batch_seq=self.batch_seq))

    def _on_syncreq(self, t: WorkTuple) -> None:
        if self.phase != "syncreq" or t.batch_seq != self.batch_seq:
            raise ConsistencyError("unexpected SYNCREQ")
        self.syncreqs[t.worker_id] = t.comp_time
        if len(self.syncreqs) == self.cfg.workers:
            self._build_and_publish()

    # -- sync construction ------------------------------------------------

    def _build_and_publish(self) -> None:
        state = self.state
        plan = self.plans[self.batch_seq]
        k = len(state.clusters)

        # Candidates: the K live clusters with delta-bumped update times,
        # plus the freshly grouped outlier clusters. Sort by latest update
        # time; existing clusters win ties, and among tied existing ones the
        # lowest slot is evicted first (matching single-slot replacement).
        candidates = []
        for slot, cluster in enumerate(state.clusters):
            eff = cluster.update_key()
            delta = self.deltas.get(cluster.uid)
            if delta is not None and delta.last_update_ts is not None:
                eff = max(eff, float(delta.last_update_ts))
            candidates.append(((eff, 1, slot), ("old", slot, eff)))
        for i, oc in enumerate(self.outliers):
            candidates.append(((oc.update_key(), 0, -i), ("new", i, oc.update_key())))
        candidates.sort(key=lambda c: c[0], reverse=True)
        survivors = candidates[:k]

        surviving_slots = {info[1] for _, info in survivors if info[0] == "old"}
        new_survivors = [self.outliers[info[1]] for _, info in survivors
                         if info[0] == "new"]
        freed = sorted(
            (slot for slot in range(k) if slot not in surviving_slots),
            key=lambda s: victim_key(state.clusters[s], s))
        slot_for_new = {}
        for oc, slot in zip(new_survivors, freed):
            oc.uid = state.next_uid
            state.next_uid += 1
            slot_for_new[slot] = oc

        entries = []
        for slot, cluster in enumerate(state.clusters):
            if slot in slot_for_new:
                oc = slot_for_new[slot]
                entries.append(CDeltaEntry(
                    uid=oc.uid, is_new=True, added=tuple(oc.members),
                    last_update_ts=oc.last_update_ts))
            else:
                delta = self.deltas.get(cluster.uid)
                eff = cluster.last_update_ts
                added: tuple = ()
                if delta is not None:
                    added = tuple(delta.added)
                    if delta.last_update_ts is not None and (
                            eff is None or delta.last_update_ts > eff):
                        eff = delta.last_update_ts
                entries.append(CDeltaEntry(
                    uid=cluster.uid, is_new=False, added=added,
                    last_update_ts=eff))

        frozen = state.stats.frozen()
        cdelta = SyncMessage(kind="CDELTA", batch_seq=self.batch_seq,
                             current_step=plan.announce_step,
                             entries=tuple(entries), stats=frozen,
                             next_uid=state.next_uid)
        apply_cdelta(state, cdelta)

        if self.cfg.strategy == CLUSTER_DELTA:
            broadcast = cdelta
        else:
            centroid_entries = []
            markers_by_uid: dict[int, list[Marker]] = {c.uid: [] for c in state.clusters}
            for marker, uid in state.marker_map.items():
                markers_by_uid[uid].append(marker)
            for cluster in state.clusters:
                cen = cluster.centroid
                centroid_entries.append(CentroidEntry(
                    uid=cluster.uid, count=cen.count,
                    last_update_ts=cluster.last_update_ts,
                    markers=tuple(sorted(markers_by_uid[cluster.uid])),
                    sums={s: dict(getattr(cen, s)) for s in Centroid.SPACES}))
            broadcast = SyncMessage(kind="CENTROIDS", batch_seq=self.batch_seq,
                                    current_step=plan.announce_step,
                                    entries=tuple(centroid_entries),
                                    stats=frozen, next_uid=state.next_uid)

        row = {
            "batch_seq": self.batch_seq,
            "tuples": self.processed,
            "adds": sum(len(e.added) for e in entries if not e.is_new),
            "new_clusters": len(new_survivors),
            "compute_time_s": max(self.syncreqs.values(), default=0.0),
            "message_bytes": (len(serialize_sync(broadcast))
                              if self.cfg.measure_bytes else None),
            "sync_time_s": None,
            "live_window": state.live_window_count(),
            "uids": [c.uid for c in state.clusters],
            "stats": [frozen.mean, frozen.sigma, frozen.count],
        }
        if self.cfg.collect_digests or self.cfg.verify_sync:
            row["decision_digest"] = digest(serialize_sync(cdelta))
        if self.cfg.verify_sync:
            if self.cfg.strategy == CLUSTER_DELTA:
                self._expected_hash = delta_state_hash(state, frozen)
            else:
                ws = CentroidWorkerState()
                apply_centroids(ws, broadcast)
                self._expected_hash = centroid_state_hash(ws, frozen)
        if self.cfg.digest_every and (
                self.batch_seq % self.cfg.digest_every == 0
                or self.batch_seq == self.final_batch):
            row["centroid_digest"] = digest(canonical_bytes([
                [c.uid, {s: getattr(c.centroid, s) for s in Centroid.SPACES}]
                for c in state.clusters]))
        self.rows.append(row)

        self.publish(broadcast)
        self.acks[self.batch_seq] = {}
        self.deltas = {}
        self.outliers = []
        self.processed = 0
        self.syncreqs = {}
        self.batch_seq += 1
        self.phase = "tuples"
        self._drain()

    def _on_ack(self, a: AppliedAck) -> None:
        batch_acks = self.acks[a.batch_seq]
        batch_acks[a.worker_id] = a
        if len(batch_acks) < self.cfg.workers:
            return
        row = self.rows[a.batch_seq]
        row["sync_time_s"] = time.perf_counter() - self._batch_t0(a.batch_seq)
        if self.cfg.verify_sync:
            hashes = {ack.state_hash for ack in batch_acks.values()}
            if len(hashes) != 1 or hashes != {self._hash_for(a.batch_seq)}:
                raise ConsistencyError(
                    f"worker states diverged after batch {a.batch_seq}")
        del self.acks[a.batch_seq]
        if a.batch_seq == self.final_batch:
            self.publish(Shutdown())
            self.done = True

    # sync timing bookkeeping: _t0 is set at SYNCINIT publish; because
    # batches are strictly sequential there is at most one open window.
    def _batch_t0(self, batch_seq: int) -> float:
        return self._t0

    def _hash_for(self, batch_seq: int) -> str:
        return self._expected_hash


# --------------------------------------------------------------------------
# Drivers

@dataclass
class ParallelResult:
    state: ClusterState
    rows: list[dict]
    counters: dict
    wall_time_s: float = 0.0


def _run_deterministic(batches, cfg: EngineConfig) -> ParallelResult:
    worker_qs = [deque() for _ in range(cfg.workers)]
    coord_q: deque = deque()

    def publish(m):
        for q in worker_qs:
            q.append(m)

    coordinator = CoordinatorRole(cfg, _copy_state(cfg.bootstrap.state), publish)
    workers = [
        WorkerRole(i, cfg, _copy_state(cfg.bootstrap.state), coord_q.append)
        for i in range(cfg.workers)
    ]
    gen = GeneratorRole(cfg, lambda w, env: worker_qs[w].append(env), coord_q.append)

    it = iter(batches)
    exhausted = False
    t_start = time.perf_counter()
    while True:
        progressed = False
        for i, w in enumerate(workers):
            if worker_qs[i]:
                w.handle(worker_qs[i].popleft())
                progressed = True
        while coord_q:
            coordinator.handle(coord_q.popleft())
            progressed = True
        if progressed:
            continue
        if not exhausted:
            batch = next(it, None)
            if batch is None:
                exhausted = True
                gen.finish()
            else:
                gen.run_batch(batch)
            continue
        break
    if not (coordinator.done and all(w.done for w in workers)):
        raise EngineError("engine stalled before completing the stream")
    counters = dict(gen.counters)
    counters.update(coordinator.counters)
    return ParallelResult(coordinator.state, coordinator.rows, counters,
                          time.perf_counter() - t_start)


def _mp_worker_main(worker_id, cfg, bootstrap_state, in_q, coord_q):
    try:
        role = WorkerRole(worker_id, cfg, bootstrap_state, coord_q.put)
        while not role.done:
            role.handle(in_q.get())
    except BaseException:
        traceback.print_exc()
        sys.exit(13)


def _mp_coord_main(cfg, bootstrap_state, coord_q, worker_qs, result_q):
    try:
        def publish(m):
            for q in worker_qs:
                q.put(m)
        role = CoordinatorRole(cfg, bootstrap_state, publish)
        while not role.done:
            role.handle(coord_q.get())
        result_q.put(("ok", role.state, role.rows, role.counters))
    except BaseException:
        result_q.put(("error", traceback.format_exc()))
        sys.exit(13)


def _check_alive(procs) -> None:
    dead = [p.name for p in procs
            if not p.is_alive() and p.exitcode not in (0, None)]
    if dead:
        raise EngineError(f"engine role(s) crashed: {', '.join(dead)}")


def _safe_put(q, item, procs) -> None:
    while True:
        try:
            q.put(item, timeout=2.0)
            return
        except queue_mod.Full:
            _check_alive(procs)


def _run_concurrent(batches, cfg: EngineConfig) -> ParallelResult:
    ctx = multiprocessing.get_context("fork")
    worker_qs = [ctx.Queue(cfg.queue_size) for _ in range(cfg.workers)]
    coord_q = ctx.Queue()
    result_q = ctx.Queue()
    procs = [
        ctx.Process(target=_mp_worker_main,
                    args=(i, cfg, cfg.bootstrap.state, worker_qs[i], coord_q),
                    name=f"memestream-worker-{i}")
        for i in range(cfg.workers)
    ]
    procs.append(ctx.Process(
        target=_mp_coord_main,
        args=(cfg, cfg.bootstrap.state, coord_q, worker_qs, result_q),
        name="memestream-coordinator"))
    for p in procs:
        p.start()

    t_start = time.perf_counter()
    gen = GeneratorRole(
        cfg,
        lambda w, env: _safe_put(worker_qs[w], env, procs),
        lambda plan: _safe_put(coord_q, plan, procs))
    all_queues = [*worker_qs, coord_q, result_q]
    try:
        for batch in batches:
            gen.run_batch(batch)
        gen.finish()
        while True:
            try:
                res = result_q.get(timeout=1.0)
                break
            except queue_mod.Empty:
                _check_alive(procs)
    except BaseException:
        # Undelivered queue data must not block interpreter exit.
        for q in all_queues:
            q.cancel_join_thread()
        for p in procs:
            if p.is_alive():
                p.terminate()
        raise
    finally:
        for p in procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()
                p.join(timeout=5)
        for q in all_queues:
            q.cancel_join_thread()
            q.close()
    if res[0] == "error":
        raise EngineError(f"coordinator failed:\n{res[1]}")
    _, state, rows, coord_counters = res
    counters = dict(gen.counters)
    counters.update(coord_counters)
    return ParallelResult(state, rows, counters, time.perf_counter() - t_start)


def bootstrap_from_steps(prefix_batches, params: Params,
                         counters: dict | None = None,
                         track_cover: bool = False) -> Bootstrap:
    """Build an engine bootstrap by running the sequential algorithm over a
    stream prefix, keeping its retweet index for diffusion continuity."""
    from .cluster import run_sequential
    idx = RetweetIndex(params.window_steps)
    state, _ = run_sequential(prefix_batches, params, retweet_index=idx,
                              counters=counters, track_cover=track_cover,
                              on_step=lambda s, b: None)
    return Bootstrap(state=state, retweet_index=idx)


def save_bootstrap(path, bootstrap: Bootstrap) -> None:
    obj = {"state": state_to_obj(bootstrap.state), "retweet_index": None}
    idx = bootstrap.retweet_index
    if idx is not None:
        obj["retweet_index"] = {
            "window_steps": idx.window_steps,
            "entries": [[tid, sorted(idx._users[tid]), idx._touched[tid]]
                        for tid in sorted(idx._users)],
        }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_bytes(obj).decode("utf-8"))


def load_bootstrap(path) -> Bootstrap:
    import json

    from .serialize import state_from_obj
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    idx = None
    if obj.get("retweet_index") is not None:
        ridx = obj["retweet_index"]
        idx = RetweetIndex(ridx["window_steps"])
        for tid, users, touched in ridx["entries"]:
            idx._users[tid] = set(users)
            idx._touched[tid] = touched
    return Bootstrap(state=state_from_obj(obj["state"]), retweet_index=idx)


def run_parallel(batches, cfg: EngineConfig) -> ParallelResult:
    """Run the parallel engine over a TimeStepBatch stream.

    In deterministic mode all roles are interleaved by a single-threaded
    scheduler (workers round-robin one message at a time, then the
    coordinator, pumping the generator when starved) and the result is a
    pure function of (stream, config). In concurrent mode every role is an
    OS process; final clusters are identical to deterministic mode because
    sync barriers and the coordinator's sequence-ordered processing make the
    outcome schedule-independent, so only the timing metrics differ.
    """
    cfg.validate()
    if cfg.deterministic:
        return _run_deterministic(batches, cfg)
    return _run_concurrent(batches, cfg)
