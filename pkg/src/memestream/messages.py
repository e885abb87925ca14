"""Engine messages and their canonical wire encoding.

Worker tuples (PMADD / OUTLIER / SYNCREQ) flow point-to-point to the
coordinator; SYNCINIT / CDELTA / CENTROIDS are broadcast on the sync topic.
Sync messages serialize to compact sorted-key JSON; the byte length of that
encoding is the reported message-size metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .cluster import FrozenStats
from .protomeme import Marker, Protomeme
from .serialize import canonical_bytes, protomeme_from_obj, protomeme_to_obj

SYNC_TOPIC = "clusters.info.sync"


@dataclass(frozen=True)
class PMEnvelope:
    """A routed protomeme: generator -> worker."""

    seq: int
    batch_seq: int
    protomeme: Protomeme


@dataclass(frozen=True)
class BatchPlan:
    """Generator -> coordinator: composition of one batch.

    `announce_step` is the time step the stream is at once this batch ends
    (the step of the next batch's first protomeme, or the final stream step);
    the sync that closes the batch carries it so every role expires to the
    same point.
    """

    batch_seq: int
    size: int
    announce_step: int
    final: bool = False


@dataclass(frozen=True)
class WorkTuple:
    """Worker -> coordinator. Field presence depends on kind:
    PMADD carries protomeme/target_uid/sim, OUTLIER carries protomeme/sim,
    SYNCREQ carries only bookkeeping."""

    kind: str  # "PMADD" | "OUTLIER" | "SYNCREQ"
    worker_id: int
    batch_seq: int
    seq: int | None = None
    protomeme: Protomeme | None = None
    target_uid: int | None = None
    sim: float | None = None
    comp_time: float = 0.0


@dataclass(frozen=True)
class AppliedAck:
    """Worker -> coordinator after applying a sync message."""

    worker_id: int
    batch_seq: int
    state_hash: str | None = None
    apply_time: float = 0.0


@dataclass(frozen=True)
class Shutdown:
    """Coordinator -> workers: the stream is fully synchronized; exit."""


@dataclass(frozen=True)
class CDeltaEntry:
    uid: int
    is_new: bool
    added: tuple[Protomeme, ...]
    last_update_ts: int | None


@dataclass(frozen=True)
class CentroidEntry:
    uid: int
    count: int
    last_update_ts: int | None
    markers: tuple[Marker, ...]
    sums: dict  # space name -> {dimension: weight}


@dataclass(frozen=True)
class SyncMessage:
    kind: str  # "SYNCINIT" | "CDELTA" | "CENTROIDS"
    batch_seq: int
    current_step: int | None = None
    entries: tuple = ()
    stats: FrozenStats | None = None
    next_uid: int | None = None


def sync_to_obj(m: SyncMessage) -> dict:
    obj = {"kind": m.kind, "batch_seq": m.batch_seq}
    if m.kind == "SYNCINIT":
        return obj
    obj["current_step"] = m.current_step
    obj["next_uid"] = m.next_uid
    obj["stats"] = {"mean": m.stats.mean, "sigma": m.stats.sigma,
                    "count": m.stats.count}
    if m.kind == "CDELTA":
        obj["entries"] = [
            {"uid": e.uid, "new": e.is_new,
             "added": [protomeme_to_obj(p) for p in e.added],
             "last_update": e.last_update_ts}
            for e in m.entries
        ]
    elif m.kind == "CENTROIDS":
        obj["entries"] = [
            {"uid": e.uid, "count": e.count, "last_update": e.last_update_ts,
             "markers": [[mk.kind, mk.value] for mk in e.markers],
             "sums": e.sums}
            for e in m.entries
        ]
    else:
        raise ValueError(f"unknown sync message kind {m.kind!r}")
    return obj


def sync_from_obj(obj: dict) -> SyncMessage:
    kind = obj["kind"]
    if kind == "SYNCINIT":
        return SyncMessage(kind="SYNCINIT", batch_seq=obj["batch_seq"])
    stats = FrozenStats(obj["stats"]["mean"], obj["stats"]["sigma"],
                        obj["stats"]["count"])
    if kind == "CDELTA":
        entries = tuple(
            CDeltaEntry(
                uid=e["uid"], is_new=e["new"],
                added=tuple(protomeme_from_obj(p) for p in e["added"]),
                last_update_ts=e["last_update"])
            for e in obj["entries"]
        )
    elif kind == "CENTROIDS":
        entries = tuple(
            CentroidEntry(
                uid=e["uid"], count=e["count"], last_update_ts=e["last_update"],
                markers=tuple(Marker(k, v) for k, v in e["markers"]),
                sums=e["sums"])
            for e in obj["entries"]
        )
    else:
        raise ValueError(f"unknown sync message kind {kind!r}")
    return SyncMessage(kind=kind, batch_seq=obj["batch_seq"],
                       current_step=obj["current_step"], entries=entries,
                       stats=stats, next_uid=obj["next_uid"])


def serialize_sync(m: SyncMessage) -> bytes:
    return canonical_bytes(sync_to_obj(m))


def deserialize_sync(data: bytes) -> SyncMessage:
    return sync_from_obj(json.loads(data.decode("utf-8")))
