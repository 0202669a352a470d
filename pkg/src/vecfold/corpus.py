"""Corpus ingestion: load, validate, and summarize line-delimited post records.

A corpus file is UTF-8 text with one JSON object per line:

    {"id": "...", "platform": "offerup", "title": "...", "body": "...",
     "images": ["rel/path.jpg", ...], "price": 123.0,
     "posted_at": "2024-01-31T12:00:00Z"}

``price`` and ``posted_at`` are optional; unknown keys are ignored but
counted.  Image entries are validated syntactically only -- bytes are never
touched here.

The record schema beyond text+images is a reconstruction; upstream data
sources do not document one.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

PLATFORMS = ("offerup", "craigslist", "other")

_KNOWN_KEYS = {"id", "platform", "title", "body", "images", "price", "posted_at"}


class CorpusError(Exception):
    """Base class for corpus loading failures."""


class FileNotReadable(CorpusError):
    pass


class SchemaViolation(CorpusError):
    def __init__(self, line: int, field_name: str, reason: str):
        self.line = line
        self.field = field_name
        self.reason = reason
        super().__init__(f"line {line}: field {field_name!r}: {reason}")


class DuplicateId(CorpusError):
    def __init__(self, post_id: str, lines: list[int]):
        self.id = post_id
        self.lines = lines
        super().__init__(f"duplicate id {post_id!r} at lines {lines}")


@dataclass(frozen=True)
class Post:
    """One marketplace listing."""

    id: str
    platform: str
    title: str = ""
    body: str = ""
    images: tuple[str, ...] = ()
    price: float | None = None
    posted_at: str | None = None


@dataclass(frozen=True)
class CorpusStats:
    total_posts: int
    per_platform: dict[str, int]
    image_count_histogram: dict[int, int]
    posts_without_images: int


@dataclass(frozen=True)
class CorpusHandle:
    """An immutable, validated sequence of posts in file order.

    Safe to share across concurrent readers.  ``skipped`` records the
    (line number, reason) pairs rejected in lenient mode; ``unknown_keys``
    counts occurrences of keys outside the record schema.
    """

    path: str
    posts: tuple[Post, ...]
    skipped: tuple[tuple[int, str], ...] = ()
    unknown_keys: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self):
        return iter(self.posts)

    def __getitem__(self, i: int) -> Post:
        return self.posts[i]

    def ids(self) -> list[str]:
        return [p.id for p in self.posts]


def _validate_posted_at(value) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError("must be an ISO-8601 timestamp string")
    # fromisoformat in 3.10 rejects a trailing Z; accept it explicitly.
    probe = value[:-1] + "+00:00" if value.endswith("Z") else value
    try:
        datetime.fromisoformat(probe)
    except ValueError as exc:
        raise ValueError(f"not ISO-8601: {exc}") from None
    return value


def parse_post(record: dict, unknown_keys: Counter | None = None) -> Post:
    """Validate one decoded JSON record and build a Post.

    Raises ValueError with a ``field:reason`` message on the first invalid
    field; the caller maps that to SchemaViolation with the line number.
    """
    if not isinstance(record, dict):
        raise ValueError("<record>:not a JSON object")

    if unknown_keys is not None:
        for key in record:
            if key not in _KNOWN_KEYS:
                unknown_keys[key] += 1

    post_id = record.get("id")
    if not isinstance(post_id, str) or not post_id:
        raise ValueError("id:missing or empty")

    platform = record.get("platform")
    if platform not in PLATFORMS:
        raise ValueError(f"platform:must be one of {PLATFORMS}, got {platform!r}")

    title = record.get("title", "")
    body = record.get("body", "")
    if not isinstance(title, str):
        raise ValueError("title:must be a string")
    if not isinstance(body, str):
        raise ValueError("body:must be a string")
    if not title.strip() and not body.strip():
        raise ValueError("title:title and body are both empty")

    images = record.get("images", [])
    if not isinstance(images, list) or any(not isinstance(r, str) for r in images):
        raise ValueError("images:must be a list of strings")
    if any(not r for r in images):
        raise ValueError("images:contains an empty reference")
    if len(set(images)) != len(images):
        raise ValueError("images:contains duplicate references")

    price = record.get("price")
    if price is not None:
        if isinstance(price, bool) or not isinstance(price, (int, float)) or price < 0:
            raise ValueError("price:must be a non-negative number")
        price = float(price)

    posted_at = record.get("posted_at")
    if posted_at is not None:
        try:
            posted_at = _validate_posted_at(posted_at)
        except ValueError as exc:
            raise ValueError(f"posted_at:{exc}") from None

    return Post(
        id=post_id,
        platform=platform,
        title=title,
        body=body,
        images=tuple(images),
        price=price,
        posted_at=posted_at,
    )


def load_corpus(path: str | Path, strict: bool = False) -> CorpusHandle:
    """Load a line-delimited JSON corpus.

    In strict mode the first invalid record aborts the load with
    SchemaViolation (or DuplicateId).  In lenient mode invalid records are
    skipped and reported with their line numbers via ``handle.skipped``.
    Blank lines are ignored entirely.  Loading the same bytes twice yields
    identical post sequences.
    """
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FileNotReadable(f"{path}: {exc}") from None

    posts: list[Post] = []
    skipped: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    unknown = Counter()

    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                if strict:
                    raise SchemaViolation(lineno, "<record>", f"invalid JSON: {exc}") from None
                skipped.append((lineno, f"invalid JSON: {exc}"))
                continue
            try:
                post = parse_post(record, unknown)
            except ValueError as exc:
                field_name, _, reason = str(exc).partition(":")
                if strict:
                    raise SchemaViolation(lineno, field_name, reason) from None
                skipped.append((lineno, f"{field_name}: {reason}"))
                continue
            if post.id in seen:
                if strict:
                    raise DuplicateId(post.id, [seen[post.id], lineno])
                skipped.append((lineno, f"id: duplicate of line {seen[post.id]}"))
                continue
            seen[post.id] = lineno
            posts.append(post)

    return CorpusHandle(
        path=str(path),
        posts=tuple(posts),
        skipped=tuple(skipped),
        unknown_keys=dict(unknown),
    )


def corpus_stats(corpus: CorpusHandle) -> CorpusStats:
    """Exact, deterministic counts over a loaded corpus."""
    per_platform = Counter()
    histogram = Counter()
    for post in corpus:
        per_platform[post.platform] += 1
        histogram[len(post.images)] += 1
    return CorpusStats(
        total_posts=len(corpus),
        per_platform=dict(per_platform),
        image_count_histogram=dict(histogram),
        posts_without_images=histogram.get(0, 0),
    )


def stats_to_dict(stats: CorpusStats) -> dict:
    return {
        "total_posts": stats.total_posts,
        "per_platform": dict(sorted(stats.per_platform.items())),
        "image_count_histogram": {
            str(k): v for k, v in sorted(stats.image_count_histogram.items())
        },
        "posts_without_images": stats.posts_without_images,
    }
