"""Tweet parsing, time-step bucketing, and synthetic planted-meme streams.

Input is JSON Lines, one Twitter-schema object per line, UTF-8. Timestamps
are integer epoch seconds internally; the Twitter string form is accepted on
input.
"""

from __future__ import annotations

import calendar
import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator

__all__ = [
    "IngestError", "ParseError", "SchemaError",
    "Tweet", "TimeStepBatch", "SynthConfig",
    "parse_tweet", "serialize_tweet", "read_tweets",
    "StepStream", "synth_stream",
]


class IngestError(ValueError):
    pass


class ParseError(IngestError):
    pass


class SchemaError(IngestError):
    pass


@dataclass(frozen=True)
class Tweet:
    tweet_id: str
    author_id: str
    created_at: int
    text: str
    hashtags: tuple[str, ...] = ()
    mention_ids: tuple[str, ...] = ()
    urls: tuple[str, ...] = ()
    retweet_of: str | None = None


@dataclass(frozen=True)
class TimeStepBatch:
    step_index: int
    step_start: int
    tweets: tuple[Tweet, ...]


_MONTHS = {
    "Jan": 1, "Feb": 2, "Mar": 3, "Apr": 4, "May": 5, "Jun": 6,
    "Jul": 7, "Aug": 8, "Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12,
}


def _parse_created_at(value, where: str) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"{where}: created_at must be a timestamp")
    if isinstance(value, (int, float)):
        ts = int(value)
    elif isinstance(value, str):
        try:
            ts = int(value)
        except ValueError:
            # Twitter format: "Sat Mar 16 20:40:13 +0000 2013". Parsed by
            # hand to stay locale-independent.
            try:
                _, mon, day, clock, zone, year = value.split()
                hh, mm, ss = clock.split(":")
                offset = (int(zone[1:3]) * 3600 + int(zone[3:5]) * 60)
                if zone[0] == "-":
                    offset = -offset
                ts = calendar.timegm(
                    (int(year), _MONTHS[mon], int(day), int(hh), int(mm), int(ss))
                ) - offset
            except (ValueError, KeyError) as exc:
                raise SchemaError(f"{where}: unparseable created_at {value!r}") from exc
    else:
        raise SchemaError(f"{where}: unparseable created_at {value!r}")
    if ts <= 0:
        raise SchemaError(f"{where}: created_at must be positive, got {ts}")
    return ts


def parse_tweet(line: str, line_no: int | None = None) -> Tweet:
    """Parse one JSON-lines tweet object into a Tweet.

    Unknown fields are ignored. Missing id_str/text/created_at/user.id_str
    raise SchemaError; malformed JSON raises ParseError with the line number.
    """
    where = f"line {line_no}" if line_no is not None else "input"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a JSON object")

    entities = obj.get("entities") or {}

    tweet_id = obj.get("id_str")
    if not tweet_id:
        raise SchemaError(f"{where}: missing id_str")
    text = obj.get("text")
    if text is None:
        raise SchemaError(f"{where}: missing text")
    # Some feeds nest user/retweeted_status under entities; accept both.
    user = obj.get("user") or entities.get("user") or {}
    author_id = user.get("id_str")
    if not author_id:
        raise SchemaError(f"{where}: missing user.id_str")
    if "created_at" not in obj:
        raise SchemaError(f"{where}: missing created_at")
    created_at = _parse_created_at(obj["created_at"], where)

    hashtags = tuple(
        h["text"] for h in entities.get("hashtags") or [] if isinstance(h, dict) and h.get("text")
    )
    mention_ids = tuple(
        m["id_str"] for m in entities.get("user_mentions") or []
        if isinstance(m, dict) and m.get("id_str")
    )
    urls = []
    for u in entities.get("urls") or []:
        if isinstance(u, dict):
            chosen = u.get("expanded_url") or u.get("url")
            if chosen:
                urls.append(chosen)
        elif isinstance(u, str) and u:
            urls.append(u)

    rt = obj.get("retweeted_status")
    if rt is None:
        rt = entities.get("retweeted_status")
    retweet_of = rt.get("id_str") if isinstance(rt, dict) else None

    return Tweet(
        tweet_id=str(tweet_id),
        author_id=str(author_id),
        created_at=created_at,
        text=str(text),
        hashtags=hashtags,
        mention_ids=mention_ids,
        urls=tuple(urls),
        retweet_of=retweet_of,
    )


def serialize_tweet(tweet: Tweet) -> str:
    """Inverse of parse_tweet for the fields this package defines."""
    obj = {
        "id_str": tweet.tweet_id,
        "text": tweet.text,
        "created_at": tweet.created_at,
        "user": {"id_str": tweet.author_id},
        "entities": {
            "hashtags": [{"text": h} for h in tweet.hashtags],
            "user_mentions": [{"id_str": m} for m in tweet.mention_ids],
            "urls": [{"expanded_url": u} for u in tweet.urls],
        },
        "retweeted_status": {"id_str": tweet.retweet_of} if tweet.retweet_of else None,
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def read_tweets(path) -> Iterator[Tweet]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                yield parse_tweet(line, line_no)


class StepStream:
    """Bucket a time-ordered tweet sequence into fixed-length time steps.

    Iterating yields one TimeStepBatch per step, empty steps included, so
    window advancement stays time-driven. Tweets older than the open step by
    more than `slack` seconds are dropped and counted in `late_dropped`;
    stragglers within the slack join the open step.
    """

    def __init__(self, source: Iterable[Tweet], step_len: int, window_start: int,
                 slack: int = 5):
        if step_len <= 0:
            raise ValueError("step_len must be positive")
        self.source = source
        self.step_len = int(step_len)
        self.window_start = int(window_start)
        self.slack = int(slack)
        self.late_dropped = 0

    def __iter__(self) -> Iterator[TimeStepBatch]:
        step_len = self.step_len
        start = self.window_start
        index = 0
        buf: list[Tweet] = []
        seen_any = False
        for tweet in self.source:
            seen_any = True
            ts = tweet.created_at
            while ts >= start + step_len:
                yield TimeStepBatch(index, start, tuple(buf))
                buf = []
                index += 1
                start += step_len
            if ts < start - self.slack:
                self.late_dropped += 1
                continue
            buf.append(tweet)
        if seen_any:
            yield TimeStepBatch(index, start, tuple(buf))


@dataclass(frozen=True)
class SynthConfig:
    num_memes: int
    tweets_total: int
    duration: int
    vocab_size: int = 500
    users: int = 1000
    retweet_prob: float = 0.15
    mention_prob: float = 0.4
    hashtag_prob: float = 0.7
    seed: int = 0

    def validate(self) -> None:
        if self.num_memes < 1:
            raise ValueError("num_memes must be positive")
        if self.tweets_total < self.num_memes:
            raise ValueError("tweets_total must be >= num_memes")
        if self.duration < 1:
            raise ValueError("duration must be positive")
        if self.vocab_size < 1 or self.users < 1:
            raise ValueError("vocab_size and users must be positive")
        for name in ("retweet_prob", "mention_prob", "hashtag_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


SYNTH_EPOCH = 1_600_000_000  # stream start used by the generator
_URL_PROB = 0.15  # fixed; not part of SynthConfig


def synth_stream(cfg: SynthConfig) -> tuple[list[Tweet], dict[str, set[str]]]:
    """Generate a planted-meme tweet stream plus its ground-truth cover.

    Deterministic for a fixed seed. Every meme owns disjoint hashtag,
    mention, url, user, and vocabulary pools, so each tweet's entities point
    at exactly one meme and the returned cover is unambiguous.
    """
    cfg.validate()
    rng = random.Random(cfg.seed)
    m = cfg.num_memes
    users_per = max(1, cfg.users // m)
    vocab_per = max(3, cfg.vocab_size // m)

    hashtag_pools = [[f"m{i}tag{j}" for j in range(6)] for i in range(m)]
    url_pools = [[f"https://s.gd/m{i}x{j}" for j in range(4)] for i in range(m)]
    mention_pools = [
        [str(10_000_000 + i * users_per + j) for j in range(min(4, users_per))]
        for i in range(m)
    ]
    vocab_pools = [[f"m{i}w{j}" for j in range(vocab_per)] for i in range(m)]

    times = sorted(rng.randrange(cfg.duration) for _ in range(cfg.tweets_total))

    tweets: list[Tweet] = []
    cover: dict[str, set[str]] = {f"m{i}": set() for i in range(m)}
    meme_tweet_ids: list[list[str]] = [[] for _ in range(m)]

    for i, offset in enumerate(times):
        meme = rng.randrange(m)
        tweet_id = f"t{i:07d}"
        author = str(10_000_000 + meme * users_per + rng.randrange(users_per))
        vocab = vocab_pools[meme]
        words = [vocab[rng.randrange(len(vocab))] for _ in range(3 + rng.randrange(6))]
        hashtags: list[str] = []
        mentions: list[str] = []
        urls: list[str] = []
        if rng.random() < cfg.hashtag_prob:
            tag = hashtag_pools[meme][rng.randrange(6)]
            hashtags.append(tag)
            words.append(f"#{tag}")
        if rng.random() < cfg.mention_prob:
            pool = mention_pools[meme]
            mid = pool[rng.randrange(len(pool))]
            mentions.append(mid)
            words.append(f"@user{mid}")
        if rng.random() < _URL_PROB:
            url = url_pools[meme][rng.randrange(4)]
            urls.append(url)
            words.append(url)
        retweet_of = None
        if meme_tweet_ids[meme] and rng.random() < cfg.retweet_prob:
            prev = meme_tweet_ids[meme]
            retweet_of = prev[rng.randrange(len(prev))]
        tweets.append(Tweet(
            tweet_id=tweet_id,
            author_id=author,
            created_at=SYNTH_EPOCH + offset,
            text=" ".join(words),
            hashtags=tuple(hashtags),
            mention_ids=tuple(mentions),
            urls=tuple(urls),
            retweet_of=retweet_of,
        ))
        meme_tweet_ids[meme].append(tweet_id)
        cover[f"m{meme}"].add(tweet_id)

    return tweets, cover
