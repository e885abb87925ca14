"""Canonical JSON encodings: protomemes, cluster snapshots, full run state.

Everything user-visible or hash-relevant is serialized as compact UTF-8 JSON
with sorted keys, so byte equality means value equality regardless of how a
structure was built.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter, deque

from .cluster import Cluster, ClusterState, OnlineStats, Params
from .protomeme import Marker, Protomeme
from .sparse import SparseVector


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(obj) -> bytes:
    return canonical_json(obj).encode("utf-8")


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def protomeme_to_obj(p: Protomeme) -> dict:
    return {
        "marker": [p.marker.kind, p.marker.value],
        "tid": p.v_tid.entries,
        "uid": p.v_uid.entries,
        "content": p.v_content.entries,
        "diffusion": p.v_diffusion.entries,
        "created": p.created_ts,
        "ending": p.ending_ts,
        "step": p.step_index,
    }


def protomeme_from_obj(o: dict) -> Protomeme:
    return Protomeme(
        marker=Marker(o["marker"][0], o["marker"][1]),
        v_tid=SparseVector(o["tid"]),
        v_uid=SparseVector(o["uid"]),
        v_content=SparseVector(o["content"]),
        v_diffusion=SparseVector(o["diffusion"]),
        created_ts=o["created"],
        ending_ts=o["ending"],
        step_index=o["step"],
    )


def snapshot_rows(state: ClusterState) -> list[dict]:
    """Snapshot the non-empty clusters as JSON-ready rows (sorted by uid)."""
    rows = []
    for cluster in state.clusters:
        if cluster.count == 0:
            continue
        rows.append({
            "cluster_uid": cluster.uid,
            "marker_list": sorted(
                f"{m.kind}:{m.value}" for m in cluster.markers.elements()),
            "tweet_ids": sorted(k[2:] for k in cluster.centroid.tid),
            "last_update_ts": cluster.last_update_ts,
        })
    rows.sort(key=lambda r: r["cluster_uid"])
    return rows


def write_snapshots(path, state: ClusterState, full_members: bool = False) -> None:
    """Write snapshot rows as JSONL; with full_members each row also carries
    its member protomemes so the file can bootstrap another run."""
    members_by_uid: dict[int, list[dict]] = {}
    if full_members:
        for cluster in state.clusters:
            members_by_uid[cluster.uid] = [
                protomeme_to_obj(m) for m in cluster.members]
    with open(path, "w", encoding="utf-8") as fh:
        for row in snapshot_rows(state):
            if full_members:
                row = dict(row, members=members_by_uid[row["cluster_uid"]])
            fh.write(canonical_json(row) + "\n")


def state_to_obj(state: ClusterState) -> dict:
    """Full, reload-exact encoding of a run state.

    Cluster members and centroids are reconstructed by replaying the window
    in order; the marker map is stored explicitly because replacements purge
    entries in ways a replay cannot reproduce.
    """
    return {
        "params": {
            "k": state.params.k,
            "step_len": state.params.step_len,
            "window_steps": state.params.window_steps,
            "nsigma": state.params.nsigma,
            "seed": state.params.seed,
        },
        "current_step": state.current_step,
        "next_uid": state.next_uid,
        "stats": {"count": state.stats.count, "mean": state.stats.mean,
                  "m2": state.stats.m2},
        "slots": [{"uid": c.uid} for c in state.clusters],
        "marker_map": [[m.kind, m.value, uid]
                       for m, uid in sorted(state.marker_map.items())],
        "window": [
            [step, [[protomeme_to_obj(p), uid] for p, uid in entries]]
            for step, entries in state.window
        ],
    }


def state_from_obj(obj: dict) -> ClusterState:
    params = Params(**obj["params"])
    state = ClusterState(params=params)
    state.clusters = [Cluster(slot["uid"]) for slot in obj["slots"]]
    state.by_uid = {c.uid: i for i, c in enumerate(state.clusters)}
    state.current_step = obj["current_step"]
    state.next_uid = obj["next_uid"]
    state.stats = OnlineStats(**obj["stats"])
    state.marker_live = Counter()
    state.window = deque()
    for step, entries in obj["window"]:
        rebuilt = []
        for pm_obj, uid in entries:
            p = protomeme_from_obj(pm_obj)
            rebuilt.append((p, uid))
            state.marker_live[p.marker] += 1
            slot = state.by_uid.get(uid)
            if slot is not None:
                state.clusters[slot].add(p)
        state.window.append((step, rebuilt))
    for cluster in state.clusters:
        cluster.refresh_last_update()
    state.marker_map = {
        Marker(kind, value): uid for kind, value, uid in obj["marker_map"]}
    return state


def save_state(path, state: ClusterState) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(state_to_obj(state)))


def load_state(path) -> ClusterState:
    with open(path, encoding="utf-8") as fh:
        return state_from_obj(json.load(fh))


def state_hash(state: ClusterState) -> str:
    return digest(canonical_bytes(state_to_obj(state)))
