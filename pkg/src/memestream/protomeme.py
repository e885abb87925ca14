"""Protomemes: marker-grouped tweet sets with their four sparse vectors.

Dimension keys are namespaced ("t:" tweet ids, "u:" user ids, "w:" stems) so
vectors from different spaces can never be accidentally compared.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

from .ingest import TimeStepBatch
from .sparse import SparseVector
from .textproc import extract_entities

MARKER_KINDS = ("hashtag", "mention", "phrase", "url")


class Marker(NamedTuple):
    kind: str
    value: str


@dataclass(frozen=True)
class Protomeme:
    marker: Marker
    v_tid: SparseVector
    v_uid: SparseVector
    v_content: SparseVector
    v_diffusion: SparseVector
    created_ts: int
    ending_ts: int
    step_index: int

    @property
    def size(self) -> int:
        return len(self.v_tid)


class RetweetIndex:
    """tweet id -> user ids who retweeted it, pruned to the sliding window.

    Entries not written to for more than `window_steps` steps are evicted;
    older retweet edges are unreachable by new protomemes.
    """

    def __init__(self, window_steps: int):
        self.window_steps = int(window_steps)
        self._users: dict[str, set[str]] = {}
        self._touched: dict[str, int] = {}

    def retweeters(self, tweet_id: str) -> set[str]:
        return self._users.get(tweet_id, set())

    def update(self, batch: TimeStepBatch) -> None:
        step = batch.step_index
        cutoff = step - self.window_steps
        if self._touched:
            stale = [tid for tid, s in self._touched.items() if s < cutoff]
            for tid in stale:
                del self._touched[tid]
                del self._users[tid]
        for tweet in batch.tweets:
            target = tweet.retweet_of
            if target:
                self._users.setdefault(target, set()).add(tweet.author_id)
                self._touched[target] = step

    def __len__(self) -> int:
        return len(self._users)


def index_retweets(batch: TimeStepBatch, idx: RetweetIndex) -> RetweetIndex:
    idx.update(batch)
    return idx


class _Group:
    __slots__ = ("tids", "uids", "content", "diffusion", "created", "ending")

    def __init__(self):
        self.tids: set[str] = set()
        self.uids: set[str] = set()
        self.content: Counter = Counter()
        self.diffusion: set[str] = set()
        self.created = None
        self.ending = None


def generate_protomemes(batch: TimeStepBatch, idx: RetweetIndex,
                        counters: dict | None = None) -> list[Protomeme]:
    """Build one protomeme per distinct marker present in the batch.

    A tweet contributes to every marker it carries; tweets with no marker at
    all produce nothing and are tallied under counters["unmarked_tweets"].
    The retweet index must already include this batch. Output is sorted by
    (kind, value).
    """
    groups: dict[Marker, _Group] = {}
    for tweet in batch.tweets:
        ent = extract_entities(tweet)
        markers = (
            [Marker("hashtag", h) for h in sorted(ent.hashtags)]
            + [Marker("mention", u) for u in sorted(ent.mention_ids)]
            + [Marker("url", u) for u in sorted(ent.urls)]
            + ([Marker("phrase", ent.phrase)] if ent.phrase else [])
        )
        if not markers:
            if counters is not None:
                counters["unmarked_tweets"] = counters.get("unmarked_tweets", 0) + 1
            continue
        for marker in markers:
            g = groups.get(marker)
            if g is None:
                g = groups[marker] = _Group()
            g.tids.add(tweet.tweet_id)
            g.uids.add(tweet.author_id)
            g.content.update(ent.content_tokens)
            g.diffusion.add(tweet.author_id)
            g.diffusion.update(ent.mention_ids)
            ts = tweet.created_at
            g.created = ts if g.created is None else min(g.created, ts)
            g.ending = ts if g.ending is None else max(g.ending, ts)

    out = []
    for marker in sorted(groups):
        g = groups[marker]
        for tid in g.tids:
            g.diffusion.update(idx.retweeters(tid))
        out.append(Protomeme(
            marker=marker,
            v_tid=SparseVector({f"t:{t}": 1 for t in g.tids}),
            v_uid=SparseVector({f"u:{u}": 1 for u in g.uids}),
            v_content=SparseVector({f"w:{w}": c for w, c in g.content.items()}),
            v_diffusion=SparseVector({f"u:{u}": 1 for u in g.diffusion}),
            created_ts=g.created,
            ending_ts=g.ending,
            step_index=batch.step_index,
        ))
    return out
