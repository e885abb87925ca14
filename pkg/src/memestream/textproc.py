"""Tokenization, stopping, stemming, and entity extraction for tweets.

All functions here are pure; the tokenizer is Unicode-aware but stemming is
applied only to ASCII-alphabetic tokens (anything else passes through
unchanged).
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

from .porter import stem as porter_stem
from .ingest import Tweet

__all__ = ["STOPWORDS", "EntitySet", "tokenize", "stem", "extract_entities"]

# Classic SMART-derived short English stopword list (174 words). Pinned here
# verbatim for reproducibility; dump with `memestream --dump-stopwords`.
STOPWORDS = frozenset("""
i me my myself we our ours ourselves you your yours yourself yourselves
he him his himself she her hers herself it its itself they them their
theirs themselves what which who whom this that these those am is are was
were be been being have has had having do does did doing would should
could ought i'm you're he's she's it's we're they're i've you've we've
they've i'd you'd he'd she'd we'd they'd i'll you'll he'll she'll we'll
they'll isn't aren't wasn't weren't hasn't haven't hadn't doesn't don't
didn't won't wouldn't shan't shouldn't can't cannot couldn't mustn't
let's that's who's what's here's there's when's where's why's how's a an
the and but if or because as until while of at by for with about against
between into through during before after above below to from up down in
out on off over under again further then once here there when where why
how all any both each few more most other some such no nor not only own
same so than too very
""".split())


def stem(token: str) -> str:
    """Porter-stem lowercase ASCII-alpha tokens; pass anything else through."""
    if token.isascii() and token.isalpha():
        return porter_stem(token)
    return token


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def _strip_edges(token: str) -> str:
    start = 0
    end = len(token)
    while start < end and _is_punct(token[start]) and token[start] not in "#@":
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[tuple[str, str]]:
    """Split text into (kind, value) tokens.

    Kinds: "word", "hashtag", "mention", "url". Values are lowercased;
    hashtag/mention values carry no prefix sigil. Order follows the text.
    """
    out: list[tuple[str, str]] = []
    for raw in text.split():
        token = _strip_edges(raw)
        if not token:
            continue
        low = token.lower()
        if low.startswith(("http://", "https://")):
            out.append(("url", low))
        elif token[0] == "#":
            value = token[1:].lstrip("#@").lower()
            if value:
                out.append(("hashtag", value))
        elif token[0] == "@":
            value = token[1:].lstrip("#@").lower()
            if value:
                out.append(("mention", value))
        else:
            out.append(("word", low))
    return out


@dataclass
class EntitySet:
    """Normalized marker-bearing entities plus the residual content tokens."""

    hashtags: set[str] = field(default_factory=set)
    mention_ids: set[str] = field(default_factory=set)
    urls: set[str] = field(default_factory=set)
    phrase: str | None = None
    content_tokens: list[str] = field(default_factory=list)


def extract_entities(tweet: Tweet) -> EntitySet:
    """Derive the four marker kinds and the stemmed content tokens of a tweet.

    Hashtags and URLs merge the schema-provided entities with text-derived
    tokens; mention ids come from the schema only (text mentions carry no
    user id). The phrase preserves original token order. Stopwords are
    filtered both before and after stemming.
    """
    tokens = tokenize(tweet.text)
    hashtags = {h.lstrip("#").lower() for h in tweet.hashtags}
    hashtags.discard("")
    mention_ids = {m for m in tweet.mention_ids if m}
    urls = {u.lower() for u in tweet.urls if u}
    content: list[str] = []
    for kind, value in tokens:
        if kind == "hashtag":
            hashtags.add(value)
        elif kind == "url":
            urls.add(value)
        elif kind == "word":
            if value in STOPWORDS:
                continue
            stemmed = stem(value)
            if stemmed and stemmed not in STOPWORDS:
                content.append(stemmed)
    phrase = " ".join(content) if content else None
    return EntitySet(
        hashtags=hashtags,
        mention_ids=mention_ids,
        urls=urls,
        phrase=phrase,
        content_tokens=content,
    )
